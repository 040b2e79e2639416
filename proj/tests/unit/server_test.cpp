#include <gtest/gtest.h>

#include <condition_variable>
#include <thread>

#include "semforge/errors.hpp"
#include "semforge/server_api.hpp"
#include "semforge/text.hpp"
#include "test_support.hpp"

using namespace semforge;
namespace st = semforge::testing;

namespace {

constexpr const char* kAssistantRules = R"yaml(
rules:
  - match: 'FEEDBACK-(\d+)$'
    response: '<prompt>revision $1 {{ input.review }}</prompt>'
  - match: 'You are helping a user improve the prompt'
    response: "<prompt>\nList every complaint theme in this review as short phrases.\nReview: {{ input.review }}\n</prompt>"
  - match: 'workbench[\s\S]*How do I loop'
    response: 'Use {% for x in inputs %}...{% endfor %}.'
)yaml";

/// Asks each provider in turn; a ProviderError moves on to the next.
class FallbackProvider : public llm::Provider {
 public:
  explicit FallbackProvider(std::vector<std::shared_ptr<llm::Provider>> chain) : chain_(std::move(chain)) {}
  std::string complete(const std::vector<llm::ChatMessage>& m, const llm::ModelProfile& p) override {
    for (std::size_t i = 0; i + 1 < chain_.size(); ++i) {
      try {
        return chain_[i]->complete(m, p);
      } catch (const ProviderError&) {
      }
    }
    return chain_.back()->complete(m, p);
  }
  llm::ProviderKind kind() const override { return llm::ProviderKind::Mock; }

 private:
  std::vector<std::shared_ptr<llm::Provider>> chain_;
};

/// Holds every call until released.
class GateProvider : public llm::Provider {
 public:
  explicit GateProvider(std::shared_ptr<llm::Provider> inner) : inner_(std::move(inner)) {}
  std::string complete(const std::vector<llm::ChatMessage>& m, const llm::ModelProfile& p) override {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return open_; });
    lock.unlock();
    return inner_->complete(m, p);
  }
  llm::ProviderKind kind() const override { return llm::ProviderKind::Mock; }
  void release() {
    {
      std::lock_guard lock(mu_);
      open_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::shared_ptr<llm::Provider> inner_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool open_ = false;
};

struct Harness {
  st::TempDir dir;
  Workspace ws;
  ApiServer server{ws};
  int port = server.bind_any("127.0.0.1");
  std::thread thread;
  httplib::Client client{"127.0.0.1", port};

  explicit Harness(std::shared_ptr<llm::Provider> provider)
      : ws(dir / "ws", std::move(provider), WorkspaceOptions{4, "gpt-4o-mini", dir / "cache"}) {
    thread = std::thread([this] { server.serve_bound(); });
    server.wait_until_ready();
    client.set_read_timeout(30, 0);
  }
  ~Harness() {
    server.stop();
    thread.join();
  }

  Value json(const httplib::Result& r) const { return Value::parse(r->body); }
  httplib::Result post(const std::string& path, const Value& body) {
    return client.Post(path, body.dump(), "application/json");
  }
  httplib::Result put(const std::string& path, const Value& body) {
    return client.Put(path, body.dump(), "application/json");
  }

  /// Uploads a fixture dataset and a fixture pipeline bound to it; returns the dataset id.
  std::string install(const std::string& dataset_file, const std::string& pipeline_file, const std::string& id) {
    auto r = client.Post("/datasets?name=" + dataset_file, st::read_file(st::fixture(dataset_file)), "application/json");
    EXPECT_EQ(r->status, 201) << r->body;
    auto ds = json(r)["id"].get<std::string>();
    auto p = load_pipeline_file(st::fixture(pipeline_file));
    p.dataset_id = ds;
    auto saved = put("/pipelines/" + id, to_json(p));
    EXPECT_EQ(saved->status, 200) << saved->body;
    return ds;
  }
};

std::shared_ptr<llm::Provider> course_provider() {
  return std::make_shared<FallbackProvider>(std::vector<std::shared_ptr<llm::Provider>>{
      st::mock(kAssistantRules), llm::MockProvider::load(st::fixture("course_review_mock.yaml"))});
}

std::vector<Value> ndjson(const std::string& body) {
  std::vector<Value> out;
  for (const auto& line : text::split_lines(body)) {
    if (!line.empty()) out.push_back(Value::parse(line));
  }
  return out;
}

}  // namespace

TEST(Server, HealthAndUnknownResources) {
  Harness h(course_provider());
  auto r = h.client.Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(h.json(r)["ok"], true);
  for (const std::string path : {"/datasets/nope", "/pipelines/nope", "/runs/nope", "/notes/nope", "/refine/nope/tree",
                                 "/decompositions/nope", "/runs/nope/events"}) {
    auto res = h.client.Get(path);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404) << path;
    EXPECT_TRUE(h.json(res).contains("error")) << path;
  }
}

TEST(Server, DatasetIngestAndErrors) {
  Harness h(course_provider());
  auto r = h.client.Post("/datasets?name=reviews", st::read_file(st::fixture("course_reviews.json")), "application/json");
  ASSERT_EQ(r->status, 201) << r->body;
  auto ds = h.json(r);
  EXPECT_EQ(ds["doc_count"], 12);
  EXPECT_EQ(ds["source_name"], "reviews");
  EXPECT_TRUE(ds["id"].get<std::string>().starts_with("ds-"));

  auto again = h.client.Post("/datasets", st::read_file(st::fixture("course_reviews.json")), "application/json");
  EXPECT_EQ(h.json(again)["id"], ds["id"]);

  auto got = h.client.Get("/datasets/" + ds["id"].get<std::string>() + "?docs=true");
  EXPECT_EQ(h.json(got)["docs"].size(), 12u);
  EXPECT_EQ(h.json(h.client.Get("/datasets")).size(), 1u);

  auto text = h.client.Post("/datasets?format=text", "one line\nsecond line\n", "text/plain");
  ASSERT_EQ(text->status, 201) << text->body;
  EXPECT_EQ(h.json(text)["doc_count"], 1);

  auto lines = h.client.Post("/datasets?format=jsonl", "{\"t\": 1}\n{\"t\": \n", "application/x-ndjson");
  EXPECT_EQ(lines->status, 400);
  EXPECT_EQ(h.json(lines)["line"], 2);
  EXPECT_EQ(h.client.Post("/datasets", "[]", "application/json")->status, 400);
  EXPECT_EQ(h.client.Post("/datasets?format=xml", "<a/>", "application/xml")->status, 400);
}

TEST(Server, PipelinesJsonYamlAndValidation) {
  Harness h(course_provider());
  auto ds = h.install("course_reviews.json", "course_reviews.yaml", "course");
  EXPECT_EQ(h.json(h.client.Get("/pipelines")), Value::array({"course"}));

  auto as_json = h.json(h.client.Get("/pipelines/course"));
  EXPECT_EQ(as_json["dataset_id"], ds);
  EXPECT_EQ(as_json["ops"].size(), 3u);
  auto yaml = h.json(h.client.Get("/pipelines/course?yaml=true"))["yaml"].get<std::string>();
  EXPECT_EQ(to_json(pipeline_from_yaml(yaml)), as_json);

  auto edited = pipeline_from_yaml(yaml);
  edited.ops[2].prompt = "Summarize {{ reduce_key }} differently: {% for r in inputs %}{{ r.supporting_quotes }}{% endfor %}";
  auto put = h.client.Put("/pipelines/course", pipeline_to_yaml(edited), "application/yaml");
  ASSERT_EQ(put->status, 200) << put->body;
  EXPECT_EQ(h.json(put)["first_dirty"], 2);
  EXPECT_TRUE(h.json(put)["diagnostics"].empty());

  auto bad = edited;
  bad.ops[0].prompt = "Review: {{ input.missing_attr }}";
  auto v = h.post("/pipelines/validate", to_json(bad));
  ASSERT_EQ(v->status, 200);
  EXPECT_EQ(h.json(v)["valid"], false);
  EXPECT_GE(h.json(v)["diagnostics"].size(), 1u);
  auto ok = h.post("/pipelines/validate", Value{{"yaml", yaml}});
  EXPECT_EQ(h.json(ok)["valid"], true);
  EXPECT_EQ(h.client.Post("/pipelines/validate", "{not json", "application/json")->status, 400);

  auto saved_bad = h.put("/pipelines/broken", to_json(bad));
  ASSERT_EQ(saved_bad->status, 200);
  EXPECT_FALSE(h.json(saved_bad)["diagnostics"].empty());
  EXPECT_EQ(h.post("/pipelines/broken/runs", Value::object())->status, 400);
}

TEST(Server, RunOutputsEventsAndJudge) {
  Harness h(course_provider());
  h.install("course_reviews.json", "course_reviews.yaml", "course");
  auto r = h.post("/pipelines/course/runs?wait=true", Value{{"run_id", "first"}});
  ASSERT_EQ(r->status, 200) << r->body;
  auto run = h.json(r);
  EXPECT_EQ(run["status"], "completed");
  EXPECT_EQ(run["finished"], true);
  EXPECT_EQ(run["ops"].size(), 3u);
  EXPECT_EQ(run["ops"][2]["output_count"], 4);
  EXPECT_EQ(run["verdicts"].size(), 3u);

  auto events = ndjson(h.client.Get("/runs/first/events?follow=false")->body);
  ASSERT_FALSE(events.empty());
  for (std::size_t i = 0; i < events.size(); ++i) EXPECT_EQ(events[i]["seq"], i + 1);
  EXPECT_EQ(events.back()["kind"], "run_done");
  auto tail = ndjson(h.client.Get("/runs/first/events?follow=false&cursor=3")->body);
  ASSERT_EQ(tail.size(), events.size() - 3);
  EXPECT_EQ(tail.front()["seq"], 4);
  auto streamed = h.client.Get("/runs/first/events?cursor=0");
  ASSERT_TRUE(streamed);
  EXPECT_EQ(streamed->get_header_value("Content-Type"), "application/x-ndjson");
  EXPECT_EQ(ndjson(streamed->body).size(), events.size());

  auto out = h.json(h.client.Get("/runs/first/ops/summarize_themes/outputs"));
  EXPECT_EQ(out["total"], 4);
  EXPECT_EQ(out["selectivity"], "12 in → 4 out, 0.33×");
  EXPECT_EQ(out["rows"][0]["attrs"]["themes"], "lecture pace too fast");
  EXPECT_FALSE(out["viz"].empty());

  auto searched = h.json(h.client.Get("/runs/first/ops/summarize_themes/outputs?search=WORKLOAD"));
  ASSERT_EQ(searched["total"], 1);
  EXPECT_EQ(searched["rows"][0]["attrs"]["themes"], "heavy workload");
  auto sorted = h.json(h.client.Get("/runs/first/ops/extract_themes/outputs?sort=id&order=desc&page_size=2&page=1"));
  EXPECT_EQ(sorted["total"], 12);
  ASSERT_EQ(sorted["rows"].size(), 2u);
  EXPECT_EQ(sorted["rows"][0]["id"], "r10");
  auto filtered = h.json(h.client.Get(
      "/runs/first/ops/summarize_themes/outputs?filter=themes&filter_op=contains&filter_value=grading"));
  EXPECT_EQ(filtered["total"], 1);
  EXPECT_EQ(h.client.Get("/runs/first/ops/extract_themes/outputs?sort=nope")->status, 400);
  EXPECT_EQ(h.client.Get("/runs/first/ops/missing/outputs")->status, 404);

  auto with_prompts = h.json(h.client.Get("/runs/first/ops/extract_themes/outputs?prompts=true&page_size=1"));
  EXPECT_TRUE(with_prompts["rows"][0]["prompt"].get<std::string>().starts_with("Extract complaint themes"));
  auto prompt = h.json(h.client.Get("/runs/first/ops/extract_themes/rows/r01/prompt"));
  EXPECT_NE(prompt["prompt"].get<std::string>().find("talks too fast"), std::string::npos);
  EXPECT_TRUE(h.json(h.client.Get("/runs/first/ops/summarize_themes/rows/x/prompt"))["prompt"].is_null());
  EXPECT_EQ(h.client.Get("/runs/first/ops/extract_themes/rows/zzz/prompt")->status, 404);

  auto verdict = h.json(h.client.Get("/runs/first/ops/extract_themes/judge"));
  EXPECT_EQ(verdict["pass"], true);
  EXPECT_EQ(verdict["sampled_row_ids"].size(), 5u);

  auto second = h.json(h.post("/pipelines/course/runs?wait=true", Value{{"judge", false}}));
  EXPECT_EQ(second["provider_calls"], 0);
  EXPECT_EQ(second["cache_reads"], 3);
  EXPECT_EQ(h.post("/pipelines/course/runs", Value{{"run_id", "first"}})->status, 409);
}

TEST(Server, SecondRunWhileActiveConflicts) {
  auto gate = std::make_shared<GateProvider>(course_provider());
  Harness h(gate);
  h.install("course_reviews.json", "course_reviews.yaml", "course");
  auto started = h.post("/pipelines/course/runs", Value{{"judge", false}});
  ASSERT_EQ(started->status, 202);
  auto id = h.json(started)["run_id"].get<std::string>();
  EXPECT_EQ(h.json(h.client.Get("/runs/" + id))["status"], "running");
  auto clash = h.post("/pipelines/course/runs", Value::object());
  EXPECT_EQ(clash->status, 409);
  gate->release();
  auto streamed = ndjson(h.client.Get("/runs/" + id + "/events")->body);
  EXPECT_EQ(streamed.back()["kind"], "run_done");
  EXPECT_EQ(h.post("/pipelines/course/runs?wait=true", Value{{"judge", false}})->status, 200);
}

TEST(Server, NotesCrud) {
  Harness h(course_provider());
  h.install("course_reviews.json", "course_reviews.yaml", "course");
  auto created = h.post("/notes", Value{{"operation_id", "extract_themes"}, {"attribute", "themes"},
                                        {"comment", "Themes are described behaviorally"}, {"tag", "red"}});
  ASSERT_EQ(created->status, 201) << created->body;
  auto id = h.json(created)["id"].get<std::string>();
  h.post("/notes", Value{{"operation_id", "gone_op"}, {"comment", "stale"}});
  EXPECT_EQ(h.post("/notes", Value{{"operation_id", "x"}, {"comment", " "}})->status, 400);
  EXPECT_EQ(h.post("/notes", Value{{"operation_id", "x"}, {"comment", "c"}, {"tag", "pink"}})->status, 400);

  auto all = h.json(h.client.Get("/notes?pipeline_id=course"));
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0]["orphaned"], true);
  EXPECT_EQ(all[1]["orphaned"], false);
  EXPECT_EQ(h.json(h.client.Get("/notes?q=BEHAVIORALLY")).size(), 1u);
  EXPECT_EQ(h.json(h.client.Get("/notes?tag=red")).size(), 1u);
  EXPECT_EQ(h.json(h.client.Get("/notes?operation_id=gone_op")).size(), 1u);

  auto patched = h.client.Patch("/notes/" + id, Value{{"comment", "edited"}}.dump(), "application/json");
  EXPECT_EQ(h.json(patched)["comment"], "edited");
  EXPECT_EQ(h.json(h.client.Get("/notes/" + id))["comment"], "edited");
  EXPECT_EQ(h.client.Delete("/notes/" + id)->status, 200);
  EXPECT_EQ(h.client.Delete("/notes/" + id)->status, 404);
}

TEST(Server, RefinementFlow) {
  Harness h(course_provider());
  h.install("course_reviews.json", "course_reviews.yaml", "course");
  auto started = h.post("/pipelines/course/ops/extract_themes/refine", Value{{"extra_instructions", nullptr}});
  ASSERT_EQ(started->status, 201) << started->body;
  auto s = h.json(started);
  auto sid = s["session_id"].get<std::string>();
  EXPECT_EQ(s["active_node"], "r1");
  EXPECT_EQ(s["nodes"].size(), 2u);
  EXPECT_TRUE(s["nodes"][1].contains("diff"));
  EXPECT_TRUE(s["active_prompt"].get<std::string>().starts_with("List every complaint theme"));

  auto fb = h.json(h.post("/refine/" + sid + "/feedback", Value{{"feedback", "FEEDBACK-4"}}));
  EXPECT_EQ(fb["active_node"], "r2");
  EXPECT_EQ(fb["active_prompt"], "revision 4 {{ input.review }}");
  EXPECT_EQ(h.post("/refine/" + sid + "/feedback", Value{{"feedback", ""}})->status, 400);

  auto edit = h.json(h.post("/refine/" + sid + "/edit", Value{{"prompt", "Mine: {{ input.review }}"}}));
  EXPECT_EQ(edit["active_node"], "r3");
  auto co = h.json(h.post("/refine/" + sid + "/checkout", Value{{"node_id", "r1"}}));
  EXPECT_EQ(co["active_node"], "r1");
  EXPECT_EQ(h.post("/refine/" + sid + "/checkout", Value{{"node_id", "r42"}})->status, 404);
  auto tree = h.json(h.client.Get("/refine/" + sid + "/tree"));
  EXPECT_EQ(tree["nodes"].size(), 4u);

  auto accepted = h.post("/refine/" + sid + "/accept", Value{{"node_id", "r3"}});
  ASSERT_EQ(accepted->status, 200) << accepted->body;
  EXPECT_EQ(h.json(accepted)["first_dirty"], 0);
  EXPECT_EQ(h.json(h.client.Get("/pipelines/course"))["ops"][0]["prompt"], "Mine: {{ input.review }}");

  EXPECT_EQ(h.post("/pipelines/course/ops/nope/refine", Value::object())->status, 404);
  EXPECT_EQ(h.post("/pipelines/nope/ops/extract_themes/refine", Value::object())->status, 404);
}

TEST(Server, AssistantChat) {
  Harness h(course_provider());
  h.install("course_reviews.json", "course_reviews.yaml", "course");
  auto r = h.post("/assistant/chat", Value{{"message", "How do I loop over inputs?"}, {"pipeline_id", "course"}});
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(h.json(r)["reply"], "Use {% for x in inputs %}...{% endfor %}.");
  EXPECT_EQ(h.post("/assistant/chat", Value::object())->status, 400);
  EXPECT_EQ(h.post("/assistant/chat", Value{{"message", "hi"}, {"pipeline_id", "nope"}})->status, 404);
  EXPECT_EQ(h.post("/assistant/chat", Value{{"message", "unmatched"}})->status, 502);
}

TEST(Server, DecomposeAndAcceptPlan) {
  Harness h(llm::MockProvider::load(st::fixture("decompose_mock.yaml")));
  h.install("decompose_transcripts.json", "decompose_pipeline.yaml", "symptoms");
  auto r = h.post("/pipelines/symptoms/ops/extract_symptoms/decompose?wait=true", Value::object());
  ASSERT_EQ(r->status, 200) << r->body;
  auto d = h.json(r);
  EXPECT_EQ(d["finished"], true);
  EXPECT_EQ(d["result"]["winner"]["id"], "chunk_map_unify");
  auto did = d["decomposition_id"].get<std::string>();

  auto log = ndjson(h.client.Get("/runs/" + did + "/events?follow=false")->body);
  ASSERT_GE(log.size(), 3u);
  EXPECT_EQ(log.front()["kind"], "optimize_log");
  EXPECT_EQ(log.back()["kind"], "run_done");
  EXPECT_EQ(h.json(h.client.Get("/decompositions/" + did))["result"]["candidates"].size(), 3u);

  auto accepted = h.post("/pipelines/symptoms/accept-plan", Value{{"decomposition_id", did}});
  ASSERT_EQ(accepted->status, 200) << accepted->body;
  auto plan = h.json(accepted);
  EXPECT_TRUE(plan["diagnostics"].empty());
  ASSERT_EQ(plan["pipeline"]["ops"].size(), 4u);
  EXPECT_EQ(plan["pipeline"]["ops"][0]["name"], "extract_symptoms_split");
  EXPECT_EQ(h.post("/pipelines/symptoms/accept-plan", Value{{"decomposition_id", "nope"}})->status, 404);

  auto run = h.json(h.post("/pipelines/symptoms/runs?wait=true", Value{{"judge", false}}));
  EXPECT_EQ(run["status"], "completed");
  EXPECT_EQ(run["ops"][2]["output_count"], 5);
}
