#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

#include "semforge/errors.hpp"
#include "semforge/operators.hpp"
#include "test_support.hpp"

using namespace semforge;
using namespace semforge::ops;
namespace st = semforge::testing;

namespace {

std::int64_t oracle_tokens(std::string_view s) { return static_cast<std::int64_t>((s.size() + 3) / 4); }

struct Harness {
  explicit Harness(const std::string& rules, std::size_t parallel = 10)
      : gateway(st::mock(rules)), ctx(gateway, gateway.profile_for("mock"), parallel) {}
  llm::Gateway gateway;
  OpContext ctx;
};

std::vector<Document> numbered_docs(int n, const std::string& attr = "text") {
  std::vector<Document> docs;
  for (int i = 0; i < n; ++i) docs.push_back(st::doc("d" + std::to_string(i), {{attr, "doc " + std::to_string(i)}}));
  return docs;
}

OperationSpec filter_op(std::string prompt) {
  OperationSpec op;
  op.name = "keep_some";
  op.kind = OpKind::Filter;
  op.prompt = std::move(prompt);
  return op;
}

OperationSpec reduce_op(std::string prompt, std::string key = "k") {
  OperationSpec op;
  op.name = "summarize";
  op.kind = OpKind::Reduce;
  op.prompt = std::move(prompt);
  op.reduce_key = std::move(key);
  op.output_schema = OutputSchema{{{"summary", SchemaType::of(ScalarKind::String)}}};
  return op;
}

OperationSpec resolve_op(double threshold = 0.0) {
  OperationSpec op;
  op.name = "canon";
  op.kind = OpKind::Resolve;
  op.resolve = ResolveConfig{"Same? {{ input1.v }} | {{ input2.v }} |",
                             "Canonical: {% for t in inputs %}{{ t.v }},{% endfor %}", "v", threshold};
  return op;
}

OperationSpec code_op(OpKind kind, std::string src) {
  OperationSpec op;
  op.name = "code";
  op.kind = kind;
  op.code_expr = std::move(src);
  return op;
}

}  // namespace

// --- map ---------------------------------------------------------------------

TEST(RunMap, AddsSchemaAttributesOnePerDocument) {
  Harness h(R"(
- match: 'Extract complaint themes[\s\S]*Review: (.*)'
  response: '{"themes": ["pace"], "supporting_quotes": ["$1"]}'
)");
  auto op = st::map_op("extract", "Extract complaint themes and their supporting quotes. Review: {{ input.review }}",
                       {{"themes", "list[string]"}, {"supporting_quotes", "list[string]"}});
  std::vector<Document> docs{st::doc("r1", {{"review", "talks too fast"}})};
  auto out = run_map(op, docs, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].attrs, (Value{{"review", "talks too fast"}, {"themes", {"pace"}}, {"supporting_quotes", {"talks too fast"}}}));
}

TEST(RunMap, CallCountEqualsDocumentCount) {
  Harness h("- match: 'x'\n  response: '{\"n\": 1}'\n");
  auto op = st::map_op("m", "x {{ input.text }}", {{"n", "integer"}});
  EXPECT_TRUE(run_map(op, {}, h.ctx).empty());
  EXPECT_EQ(h.gateway.calls(), 0);
  auto out = run_map(op, numbered_docs(10), h.ctx);
  EXPECT_EQ(out.size(), 10u);
  EXPECT_EQ(h.gateway.calls(), 10);
}

TEST(RunMap, OverwritesExistingAttribute) {
  Harness h("- match: 'x'\n  response: '{\"text\": \"new\"}'\n");
  auto out = run_map(st::map_op("m", "x {{ input.text }}", {{"text", "string"}}), numbered_docs(1), h.ctx);
  EXPECT_EQ(out[0].attrs["text"], "new");
  EXPECT_EQ(out[0].attrs.size(), 1u);
}

TEST(RunMap, PerDocumentErrorsMarkedAndRunContinues) {
  Harness h("- match: 'x doc [02]\\n'\n  response: '{\"n\": 1}'\n");
  auto out = run_map(st::map_op("m", "x {{ input.text }}", {{"n", "integer"}}), numbered_docs(3), h.ctx);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].attrs["n"], 1);
  EXPECT_TRUE(out[1].attrs.contains("_error.m"));
  EXPECT_FALSE(out[1].attrs.contains("n"));
  EXPECT_EQ(out[2].attrs["n"], 1);
  ASSERT_EQ(h.ctx.errors().size(), 1u);
  EXPECT_EQ(h.ctx.errors()[0].doc_id, "d1");
}

TEST(RunMap, OrderIndependentOfParallelBound) {
  const std::string rules = "- match: 'x doc (\\d+)'\n  response: '{\"n\": $1}'\n";
  auto op = st::map_op("m", "x {{ input.text }}", {{"n", "integer"}});
  auto docs = numbered_docs(40);
  Harness one(rules, 1), many(rules, 16);
  auto a = run_map(op, docs, one.ctx);
  auto b = run_map(op, docs, many.ctx);
  ASSERT_EQ(a, b);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(a[i].attrs["n"], i);
}

TEST(RunMap, ProgressCountsMonotone) {
  Harness h("- match: 'x'\n  response: '{\"n\": 1}'\n", 4);
  std::vector<std::size_t> seen;
  std::mutex mu;
  h.ctx.on_progress([&](std::size_t done, std::size_t total) {
    std::lock_guard lock(mu);
    EXPECT_EQ(total, 12u);
    seen.push_back(done);
  });
  run_map(st::map_op("m", "x {{ input.text }}", {{"n", "integer"}}), numbered_docs(12), h.ctx);
  ASSERT_EQ(seen.size(), 12u);
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], i + 1);
}

// --- filter ------------------------------------------------------------------

TEST(RunFilter, AllTrueAndAllFalse) {
  auto docs = numbered_docs(5);
  Harness yes("- match: 'keep'\n  response: 'TRUE'\n");
  EXPECT_EQ(run_filter(filter_op("keep? {{ input.text }}"), docs, yes.ctx), docs);
  Harness no("- match: 'keep'\n  response: '{\"keep\": false}'\n");
  EXPECT_TRUE(run_filter(filter_op("keep? {{ input.text }}"), docs, no.ctx).empty());
}

TEST(RunFilter, AlternatingKeepsEvenIndices) {
  Harness h(R"(
- match: 'keep\? doc [02468]\n'
  response: 'True'
- match: 'keep\?'
  response: 'False'
)");
  auto docs = numbered_docs(10);
  auto out = run_filter(filter_op("keep? {{ input.text }}"), docs, h.ctx);
  ASSERT_EQ(out.size(), 5u);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], docs[2 * i]);
  EXPECT_EQ(h.gateway.calls(), 10);
}

TEST(RunFilter, FailsOpenOnError) {
  Harness h("- match: 'keep\\? doc 0'\n  response: 'False'\n");
  auto out = run_filter(filter_op("keep? {{ input.text }}"), numbered_docs(2), h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, "d1");
  EXPECT_TRUE(out[0].attrs.contains("_error.keep_some"));
  EXPECT_FALSE(out[0].attrs.contains("keep"));
}

// --- reduce ------------------------------------------------------------------

TEST(RunReduce, OneOutputPerKeyInFirstAppearanceOrder) {
  Harness h("- match: 'About (\\w+)'\n  response: '{\"summary\": \"S-$1\"}'\n");
  std::vector<Document> docs{st::doc("1", {{"k", "b"}}), st::doc("2", {{"k", "a"}}), st::doc("3", {{"k", "b"}}),
                             st::doc("4", Value::object()), st::doc("5", {{"k", "c"}})};
  auto out = run_reduce(reduce_op("About {{ reduce_key }}: {% for d in inputs %}.{% endfor %}"), docs, h.ctx);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].attrs, (Value{{"k", "b"}, {"summary", "S-b"}}));
  EXPECT_EQ(out[1].attrs["k"], "a");
  EXPECT_TRUE(out[2].attrs["k"].is_null());
  EXPECT_EQ(out[3].attrs["k"], "c");
  EXPECT_EQ(h.gateway.calls(), 4);
}

TEST(RunReduce, ListValuedKeyJoinsEveryGroup) {
  auto groups = group_documents({st::doc("1", {{"k", {"x", "y"}}}), st::doc("2", {{"k", {"y"}}}), st::doc("3", {{"k", Value::array()}})}, "k");
  ASSERT_EQ(groups.size(), 3u);
  EXPECT_EQ(groups[0].first, "x");
  EXPECT_EQ(groups[1].second, (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(groups[2].first.is_null());
}

TEST(RunReduce, SingleGroupFittingIsOneCall) {
  Harness h("- match: 'About'\n  response: '{\"summary\": \"ok\"}'\n");
  run_reduce(reduce_op("About {{ reduce_key }}{% for d in inputs %}{{ d.text }}{% endfor %}"),
             {st::doc("1", {{"k", "a"}, {"text", "x"}}), st::doc("2", {{"k", "a"}, {"text", "y"}})}, h.ctx);
  EXPECT_EQ(h.gateway.calls(), 1);
}

namespace {

// Greedy prefix batching computed independently of the library.
struct FoldPrediction {
  std::vector<std::vector<std::string>> batches;  // doc ids per batch
};

std::string fold_prompt(const std::string& key, const std::vector<Document>& batch, const std::string& acc_summary) {
  std::string s = "Summarize " + key + ":";
  for (const auto& d : batch) s += " " + d.id + "=" + d.attrs["text"].get<std::string>() + ";";
  s += "\n";
  if (!acc_summary.empty()) s += "\n\nPartial result from earlier documents in this group:\n{\"summary\":\"" + acc_summary + "\"}";
  return s;
}

FoldPrediction predict_fold(const std::string& key, const std::vector<Document>& members, std::int64_t limit,
                            std::int64_t instruction_tokens) {
  FoldPrediction p;
  std::string acc;
  std::size_t i = 0;
  while (i < members.size()) {
    std::vector<Document> batch{members[i++]};
    while (i < members.size()) {
      auto trial = batch;
      trial.push_back(members[i]);
      if (oracle_tokens(fold_prompt(key, trial, acc)) + instruction_tokens > limit) break;
      batch = std::move(trial);
      ++i;
    }
    std::vector<std::string> ids;
    for (const auto& d : batch) ids.push_back(d.id);
    acc = "after " + ids.front();
    p.batches.push_back(std::move(ids));
  }
  return p;
}

const char* kFoldRules = R"(
context_limit: 300
rules:
  - match: 'Summarize \w+: (\w+)='
    response: '{"summary": "after $1"}'
)";

}  // namespace

TEST(RunReduce, FoldsOversizedGroupInPredictedBatches) {
  Harness h(kFoldRules);
  auto op = reduce_op("Summarize {{ reduce_key }}:{% for d in inputs %} {{ d.id }}={{ d.text }};{% endfor %}\n");
  const auto instruction = oracle_tokens(llm::schema_instruction(*op.output_schema));
  std::mt19937_64 rng(99);
  std::vector<Document> docs;
  std::map<std::string, std::vector<Document>> by_key;
  std::vector<std::string> key_order;
  for (int i = 0; i < 36; ++i) {
    std::string key = std::vector<std::string>{"alpha", "beta", "gamma"}[rng() % 3];
    Value attrs{{"id", "x" + std::to_string(i)}, {"k", key}, {"text", st::random_words(rng, 30 + rng() % 30)}};
    docs.push_back(st::doc("x" + std::to_string(i), attrs));
    if (!by_key.count(key)) key_order.push_back(key);
    by_key[key].push_back(docs.back());
  }

  auto out = run_reduce(op, docs, h.ctx);
  ASSERT_EQ(out.size(), key_order.size());
  std::size_t predicted_calls = 0;
  bool saw_multi_batch = false;
  for (std::size_t g = 0; g < key_order.size(); ++g) {
    auto pred = predict_fold(key_order[g], by_key[key_order[g]], 300, instruction);
    predicted_calls += pred.batches.size();
    saw_multi_batch |= pred.batches.size() >= 3;
    EXPECT_EQ(out[g].attrs["k"], key_order[g]);
    EXPECT_EQ(out[g].attrs["summary"], "after " + pred.batches.back().front()) << key_order[g];
  }
  EXPECT_TRUE(saw_multi_batch);
  EXPECT_EQ(h.gateway.calls(), static_cast<std::int64_t>(predicted_calls));
}

TEST(RunReduce, ThreeBatchGroupMakesThreeSequentialCalls) {
  Harness h(kFoldRules);
  auto op = reduce_op("Summarize {{ reduce_key }}:{% for d in inputs %} {{ d.id }}={{ d.text }};{% endfor %}\n");
  const auto instruction = oracle_tokens(llm::schema_instruction(*op.output_schema));
  // Each document is ~85 tokens; two fit under the limit, a third does not.
  std::vector<Document> docs;
  for (int i = 0; i < 6; ++i)
    docs.push_back(st::doc("y" + std::to_string(i), {{"id", "y" + std::to_string(i)}, {"k", "g"}, {"text", std::string(330, 'a' + i)}}));
  auto pred = predict_fold("g", docs, 300, instruction);
  ASSERT_EQ(pred.batches.size(), 3u);
  EXPECT_EQ(pred.batches[0], (std::vector<std::string>{"y0", "y1"}));
  auto out = run_reduce(op, docs, h.ctx);
  EXPECT_EQ(h.gateway.calls(), 3);
  EXPECT_EQ(out[0].attrs["summary"], "after y4");
}

TEST(RunReduce, AccumulatedBindingReplacesAppendix) {
  Harness h(R"(
context_limit: 300
rules:
  - match: 'Partial result'
    response: '{"summary": "appendix used"}'
  - match: 'Prior: \{"summary":"([\w-]+)'
    response: '{"summary": "seen-$1"}'
  - match: 'Prior: null[\s\S]*? (\w+)='
    response: '{"summary": "$1"}'
)");
  auto op = reduce_op("Prior: {{ accumulated }}{% for d in inputs %} {{ d.id }}={{ d.text }};{% endfor %}");
  std::vector<Document> docs;
  for (int i = 0; i < 4; ++i)
    docs.push_back(st::doc("z" + std::to_string(i), {{"id", "z" + std::to_string(i)}, {"k", "g"}, {"text", std::string(700, 'q')}}));
  auto out = run_reduce(op, docs, h.ctx);
  EXPECT_EQ(h.gateway.calls(), 4);
  EXPECT_EQ(out[0].attrs["summary"], "seen-seen-seen-z0");
}

TEST(RunReduce, DocumentAloneTooLargeMarksGroup) {
  Harness h(kFoldRules);
  auto op = reduce_op("Summarize {{ reduce_key }}:{% for d in inputs %} {{ d.id }}={{ d.text }};{% endfor %}\n");
  auto out = run_reduce(op, {st::doc("big", {{"id", "big"}, {"k", "g"}, {"text", std::string(2000, 'b')}}),
                             st::doc("ok", {{"id", "ok"}, {"k", "h"}, {"text", "fine"}})}, h.ctx);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_TRUE(out[0].attrs.contains("_error.summarize"));
  EXPECT_EQ(out[1].attrs["summary"], "after ok");
}

// --- resolve -----------------------------------------------------------------

TEST(RunResolve, CourseThemesMerged) {
  Harness h(R"(
- match: 'Same\? (professor talks too fast|professor speaks quickly) \| (professor talks too fast|professor speaks quickly) \|'
  response: 'True'
- match: 'Same\?'
  response: 'False'
- match: 'Canonical:'
  response: '{"v": "lecture pace too fast"}'
)");
  std::vector<Document> docs{st::doc("1", {{"v", "professor talks too fast"}}), st::doc("2", {{"v", "unfair grading"}}),
                             st::doc("3", {{"v", "professor speaks quickly"}})};
  ResolveStats stats;
  auto out = run_resolve(resolve_op(), docs, h.ctx, &stats);
  EXPECT_EQ(out[0].attrs["v"], "lecture pace too fast");
  EXPECT_EQ(out[1].attrs["v"], "unfair grading");
  EXPECT_EQ(out[2].attrs["v"], "lecture pace too fast");
  EXPECT_EQ(stats.candidate_pairs, 3u);
  EXPECT_EQ(stats.multi_clusters, 1u);
  EXPECT_EQ(h.gateway.calls(), 4);
}

TEST(RunResolve, TrivialInputsMakeNoCalls) {
  Harness h("- match: 'Same'\n  response: 'True'\n");
  EXPECT_TRUE(run_resolve(resolve_op(), {}, h.ctx).empty());
  std::vector<Document> one{st::doc("1", {{"v", "a"}}), st::doc("2", {{"v", "a"}})};
  EXPECT_EQ(run_resolve(resolve_op(), one, h.ctx), one);
  EXPECT_EQ(h.gateway.calls(), 0);
}

TEST(RunResolve, TransitivityThroughMiddleValue) {
  Harness h(R"(
- match: 'Same\? (a|b) \| (a|b) \|'
  response: 'True'
- match: 'Same\? (b|c) \| (b|c) \|'
  response: 'True'
- match: 'Same\?'
  response: 'False'
- match: 'Canonical: (\w+),'
  response: '{"v": "C-$1"}'
)");
  std::vector<Document> docs{st::doc("1", {{"v", "a"}}), st::doc("2", {{"v", "b"}}), st::doc("3", {{"v", "c"}})};
  auto out = run_resolve(resolve_op(), docs, h.ctx);
  for (const auto& d : out) EXPECT_EQ(d.attrs["v"], "C-a");
}

TEST(RunResolve, BlockingThresholdPrunesPairs) {
  Harness h("- match: 'Same'\n  response: 'False'\n");
  std::vector<Document> docs{st::doc("1", {{"v", "too much homework"}}), st::doc("2", {{"v", "much homework"}}),
                             st::doc("3", {{"v", "grading unfair"}})};
  ResolveStats stats;
  run_resolve(resolve_op(0.5), docs, h.ctx, &stats);
  EXPECT_EQ(stats.candidate_pairs, 1u);
  EXPECT_EQ(h.gateway.calls(), 1);
}

TEST(RunResolve, ComparisonCapEnforced) {
  Harness h("- match: 'Same'\n  response: 'False'\n");
  std::vector<Document> docs;
  for (int i = 0; i < 142; ++i) docs.push_back(st::doc(std::to_string(i), {{"v", "value " + std::to_string(i)}}));
  EXPECT_THROW(run_resolve(resolve_op(), docs, h.ctx), OperatorError);
  EXPECT_EQ(h.gateway.calls(), 0);
}

TEST(RunResolve, ResolutionFailureLeavesValuesMarked) {
  Harness h("- match: 'Same'\n  response: 'True'\n");
  std::vector<Document> docs{st::doc("1", {{"v", "a"}}), st::doc("2", {{"v", "b"}})};
  auto out = run_resolve(resolve_op(), docs, h.ctx);
  EXPECT_EQ(out[0].attrs["v"], "a");
  EXPECT_TRUE(out[0].attrs.contains("_error.canon"));
}

TEST(RunResolve, ClosureMatchesBruteForceProperty) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 1 + rng() % 8;
    std::vector<std::string> values;
    for (std::size_t i = 0; i < n; ++i) values.push_back("w" + std::to_string(i));
    std::vector<std::vector<bool>> accept(n, std::vector<bool>(n, false));
    std::string rules;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (rng() % 3 == 0) {
          accept[i][j] = accept[j][i] = true;
          for (auto [x, y] : {std::pair{i, j}, std::pair{j, i}})
            rules += "- match: 'Same\\? " + values[x] + " \\| " + values[y] + " \\|'\n  response: 'True'\n";
        }
    rules += "- match: 'Same\\?'\n  response: 'False'\n- match: 'Canonical: (\\w+),'\n  response: '{\"v\": \"C-$1\"}'\n";

    // Documents in a shuffled order; some carry the values as lists.
    std::vector<Document> docs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      Value v = rng() % 3 == 0 ? Value::array({values[order[i]], values[order[(i + 1) % n]]}) : Value(values[order[i]]);
      docs.push_back(st::doc("doc" + std::to_string(i), {{"v", v}}));
    }
    std::vector<std::size_t> first_seen;
    for (const auto& d : docs) {
      auto note = [&](const std::string& s) {
        std::size_t idx = std::stoul(s.substr(1));
        if (std::find(first_seen.begin(), first_seen.end(), idx) == first_seen.end()) first_seen.push_back(idx);
      };
      if (d.attrs["v"].is_array()) {
        for (const auto& e : d.attrs["v"]) note(e.get<std::string>());
      } else {
        note(d.attrs["v"].get<std::string>());
      }
    }

    // Brute-force closure: repeated relaxation of the reachability matrix.
    auto reach = accept;
    for (std::size_t i = 0; i < n; ++i) reach[i][i] = true;
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < n; ++k)
            if (reach[i][k] && reach[k][j] && !reach[i][j]) reach[i][j] = changed = true;
    }
    std::map<std::size_t, std::string> expected;
    std::size_t multi = 0;
    std::set<std::size_t> counted;
    for (auto v : first_seen) {
      std::size_t size = 0;
      std::size_t leader = v;
      for (auto u : first_seen)
        if (reach[v][u]) {
          ++size;
          if (std::find(first_seen.begin(), first_seen.end(), u) < std::find(first_seen.begin(), first_seen.end(), leader))
            leader = u;
        }
      expected[v] = size >= 2 ? "C-" + values[leader] : values[v];
      if (size >= 2 && counted.insert(leader).second) ++multi;
    }

    Harness h(rules, seed % 2 ? 1 : 8);
    ResolveStats stats;
    auto out = run_resolve(resolve_op(), docs, h.ctx, &stats);
    const std::size_t pairs = n * (n - 1) / 2;
    ASSERT_EQ(stats.candidate_pairs, pairs) << "seed " << seed;
    ASSERT_EQ(stats.multi_clusters, multi) << "seed " << seed;
    ASSERT_EQ(h.gateway.calls(), static_cast<std::int64_t>(pairs + multi)) << "seed " << seed;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = docs[i].attrs["v"];
      auto check = [&](const Value& before, const Value& after) {
        ASSERT_EQ(after.get<std::string>(), expected[std::stoul(before.get<std::string>().substr(1))]) << "seed " << seed;
      };
      if (v.is_array()) {
        for (std::size_t e = 0; e < v.size(); ++e) check(v[e], out[i].attrs["v"][e]);
      } else {
        check(v, out[i].attrs["v"]);
      }
    }
  }
}

// --- unnest ------------------------------------------------------------------

namespace {

OperationSpec unnest_op(std::string attr = "symptoms") {
  OperationSpec op;
  op.name = "rows";
  op.kind = OpKind::Unnest;
  op.unnest_attribute = std::move(attr);
  return op;
}

}  // namespace

TEST(RunUnnest, SymptomFixtureExpandsTo47) {
  auto ds = load_dataset(st::fixture("symptom_transcripts.json"));
  ASSERT_EQ(ds.docs.size(), 10u);
  std::size_t total = 0;
  for (const auto& d : ds.docs) total += d.attrs["symptoms"].size();
  ASSERT_EQ(total, 47u);
  auto out = run_unnest(unnest_op(), ds.docs);
  EXPECT_EQ(out.size(), 47u);
  EXPECT_EQ(format_selectivity(ds.docs.size(), out.size()), "10 in → 47 out, 4.70×");
}

TEST(RunUnnest, MixedLengthsInParentOrder) {
  std::vector<Document> docs{st::doc("a", {{"symptoms", {"x", "y"}}, {"p", 1}}), st::doc("b", {{"symptoms", Value::array()}}),
                             st::doc("c", {{"symptoms", {"z", "w", "v"}}})};
  auto out = run_unnest(unnest_op(), docs);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[0].id, "a#0");
  EXPECT_EQ(out[1].attrs, (Value{{"symptoms", "y"}, {"p", 1}}));
  EXPECT_EQ(out[2].id, "c#0");
  EXPECT_EQ(out[4].attrs["symptoms"], "v");
}

TEST(RunUnnest, NullDropsScalarIsSingleton) {
  auto out = run_unnest(unnest_op(), {st::doc("a", {{"symptoms", nullptr}}), st::doc("b", {{"symptoms", "cough"}})});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].attrs["symptoms"], "cough");
  EXPECT_TRUE(run_unnest(unnest_op(), {st::doc("a", {{"symptoms", Value::array()}})}).empty());
}

TEST(RunUnnest, NestByParentIsIdentityProperty) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Document> docs;
    for (int i = 0, n = rng() % 8; i < n; ++i) {
      Value list = Value::array();
      for (int k = 0, m = 1 + rng() % 5; k < m; ++k) list.push_back(st::random_words(rng, 1));
      docs.push_back(st::doc("p" + std::to_string(i), {{"meta", static_cast<int>(rng() % 10)}, {"symptoms", list}}));
    }
    auto rows = run_unnest(unnest_op(), docs);
    std::vector<Document> renested;
    for (const auto& r : rows) {
      auto parent = r.id.substr(0, r.id.find('#'));
      if (renested.empty() || renested.back().id != parent) {
        renested.push_back(r);
        renested.back().id = parent;
        renested.back().attrs["symptoms"] = Value::array();
      }
      renested.back().attrs["symptoms"].push_back(r.attrs["symptoms"]);
    }
    ASSERT_EQ(renested, docs);
  }
}

// --- split / gather ----------------------------------------------------------

namespace {

OperationSpec split_op(std::int64_t budget) {
  OperationSpec op;
  op.name = "split";
  op.kind = OpKind::Split;
  op.split = SplitConfig{"src", budget};
  return op;
}

}  // namespace

TEST(RunSplit, UnderBudgetIsOneChunk) {
  Harness h("[]");
  auto out = run_split(split_op(100), {st::doc("a", {{"src", "short text"}})}, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].attrs["src"], "short text");
  EXPECT_EQ(out[0].attrs["_chunk_index"], 0);
  EXPECT_EQ(out[0].attrs["_parent_id"], "a");
}

TEST(RunSplit, ReassemblyOfLongText) {
  Harness h("[]");
  std::mt19937_64 rng(4);
  std::string text;
  while (oracle_tokens(text) < 2500) text += st::random_words(rng, 1) + " ";
  text.resize(10000);  // exactly 2500 tokens
  auto out = run_split(split_op(1000), {st::doc("a", {{"src", text}})}, h.ctx);
  ASSERT_EQ(out.size(), 3u);
  std::string joined;
  for (const auto& c : out) {
    EXPECT_LE(oracle_tokens(c.attrs["src"].get<std::string>()), 1000);
    joined += c.attrs["src"].get<std::string>();
  }
  EXPECT_EQ(joined, text);
}

TEST(RunSplit, ChunksBreakAtWhitespaceProperty) {
  Harness h("[]");
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto text = st::random_words(rng, rng() % 400);
    std::int64_t budget = 5 + rng() % 60;
    auto out = run_split(split_op(budget), {st::doc("a", {{"src", text}})}, h.ctx);
    std::string joined;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& c = out[i].attrs["src"].get_ref<const std::string&>();
      ASSERT_LE(oracle_tokens(c), budget);
      if (i + 1 < out.size() && c.find(' ') != std::string::npos) {
        ASSERT_EQ(c.back(), ' ') << c;
      }
      ASSERT_EQ(out[i].attrs["_chunk_index"], i);
      joined += c;
    }
    ASSERT_EQ(joined, text);
  }
}

TEST(RunSplit, SplitMapReduceRestoresDocumentCount) {
  Harness h(R"(
- match: 'Find in'
  response: '{"found": "x"}'
- match: 'Unify'
  response: '{"found": "all"}'
)");
  std::vector<Document> docs;
  for (int i = 0; i < 4; ++i) docs.push_back(st::doc("p" + std::to_string(i), {{"src", std::string(300 + 100 * i, 'w') + " tail"}}));
  auto chunks = run_split(split_op(40), docs, h.ctx);
  EXPECT_GT(chunks.size(), docs.size());
  auto mapped = run_map(st::map_op("find", "Find in {{ input.src }}", {{"found", "string"}}), chunks, h.ctx);
  auto grouped = run_gather(mapped);
  ASSERT_EQ(grouped.size(), docs.size());
  auto unify = reduce_op("Unify {% for c in inputs %}{{ c.found }}{% endfor %}", "_parent_id");
  unify.output_schema = OutputSchema{{{"found", SchemaType::of(ScalarKind::String)}}};
  auto out = run_reduce(unify, mapped, h.ctx);
  ASSERT_EQ(out.size(), docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) EXPECT_EQ(out[i].attrs["_parent_id"], docs[i].id);
}

// --- code operators ----------------------------------------------------------

TEST(RunCodeOp, FilterOnBackPain) {
  Harness h("[]");
  std::vector<Document> docs{st::doc("1", {{"summary", "Chronic BACK PAIN"}}), st::doc("2", {{"summary", "knee pain"}}),
                             st::doc("3", {{"summary", "back pain, mild"}})};
  auto out = run_code_op(code_op(OpKind::CodeFilter, "contains(lower(input.summary), \"back pain\")"), docs, h.ctx);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].id, "1");
  EXPECT_EQ(out[1].id, "3");
  EXPECT_EQ(h.gateway.calls(), 0);
}

TEST(RunCodeOp, MapLength) {
  Harness h("[]");
  auto out = run_code_op(code_op(OpKind::CodeMap, "{n: length(input.symptoms)}"), {st::doc("1", {{"symptoms", {"a", "b"}}})}, h.ctx);
  EXPECT_EQ(out[0].attrs["n"], 2);
}

TEST(RunCodeOp, ReduceDistinct) {
  Harness h("[]");
  auto op = code_op(OpKind::CodeReduce, "{count: count(inputs), values: distinct(inputs.s)}");
  op.reduce_key = "g";
  std::vector<Document> docs{st::doc("1", {{"g", "x"}, {"s", "knee pain"}}), st::doc("2", {{"g", "x"}, {"s", "knee pain"}}),
                             st::doc("3", {{"g", "x"}, {"s", "back pain"}})};
  auto out = run_code_op(op, docs, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].attrs, (Value{{"g", "x"}, {"count", 3}, {"values", {"knee pain", "back pain"}}}));
}

TEST(RunCodeOp, EvalErrorsFailOpen) {
  Harness h("[]");
  auto out = run_code_op(code_op(OpKind::CodeFilter, "lower(input.n) == \"x\""), {st::doc("1", {{"n", 5}})}, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].attrs.contains("_error.code"));
  auto mapped = run_code_op(code_op(OpKind::CodeMap, "{n: lower(input.n)}"), {st::doc("1", {{"n", 5}})}, h.ctx);
  EXPECT_TRUE(mapped[0].attrs.contains("_error.code"));
}

TEST(FormatSelectivity, TwoDecimals) {
  EXPECT_EQ(format_selectivity(10, 47), "10 in → 47 out, 4.70×");
  EXPECT_EQ(format_selectivity(12, 4), "12 in → 4 out, 0.33×");
  EXPECT_EQ(format_selectivity(0, 0), "0 in → 0 out, n/a");
}
