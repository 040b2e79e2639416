// Headless driver: validate, run, cache gc, serve.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "semforge/cache.hpp"
#include "semforge/executor.hpp"
#include "semforge/judge.hpp"
#include "semforge/server_api.hpp"
#include "semforge/viz.hpp"

namespace fs = std::filesystem;
using namespace semforge;

namespace {

int fail(const std::string& kind, const std::string& message, int code = 2) {
  std::cerr << Value{{"error", message}, {"kind", kind}}.dump() << "\n";
  return code;
}

std::shared_ptr<llm::Provider> make_provider(const std::string& mock_path) {
  if (!mock_path.empty()) return llm::MockProvider::load(mock_path);
  return llm::HttpProvider::from_env();
}

/// --data, else the pipeline's `dataset` resolved against the pipeline file's directory.
std::optional<fs::path> dataset_path(const std::string& data, const PipelineSpec& p, const fs::path& pipeline_file) {
  if (!data.empty()) return fs::path(data);
  if (p.dataset_id.empty()) return std::nullopt;
  fs::path candidate = p.dataset_id;
  if (candidate.is_relative()) candidate = pipeline_file.parent_path() / candidate;
  if (fs::exists(candidate)) return candidate;
  return std::nullopt;
}

void write_text(const fs::path& path, const std::string& data) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << data;
}

ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semforge: semantic document pipelines"};
  app.require_subcommand(1);

  // validate
  auto* validate = app.add_subcommand("validate", "Check a pipeline file");
  std::string v_pipeline, v_data;
  validate->add_option("pipeline", v_pipeline, "Pipeline YAML")->required();
  validate->add_option("--data", v_data, "Dataset path (defaults to the pipeline's dataset)");

  // run
  auto* run = app.add_subcommand("run", "Execute a pipeline");
  std::string r_pipeline, r_data, r_out = "out", r_mock, r_cache;
  std::size_t r_sample = 0, r_parallel = 10;
  std::optional<std::uint64_t> r_seed;
  bool r_fresh = false, r_judge = false, r_show_viz = false, r_verify = false;
  run->add_option("pipeline", r_pipeline, "Pipeline YAML")->required();
  run->add_option("--data", r_data, "Dataset path (defaults to the pipeline's dataset)");
  run->add_option("--sample", r_sample, "Process only N documents");
  run->add_option("--sample-seed", r_seed, "Seeded random sample instead of the first N");
  run->add_flag("--fresh", r_fresh, "Ignore cached outputs");
  run->add_option("--out", r_out, "Output directory");
  run->add_option("--max-parallel", r_parallel, "Concurrent provider calls")->check(CLI::PositiveNumber);
  run->add_option("--mock", r_mock, "Mock provider rules (YAML)");
  run->add_option("--cache-dir", r_cache, "Cache directory (default $SEMFORGE_CACHE_DIR or ./.semforge-cache)");
  run->add_flag("--judge", r_judge, "Judge semantic outputs after the run");
  run->add_flag("--show-viz", r_show_viz, "Print column charts of the last operation");
  run->add_flag("--verify-cache", r_verify, "Recompute cache hits and compare");

  // cache gc
  auto* cache = app.add_subcommand("cache", "Cache maintenance");
  cache->require_subcommand(1);
  auto* gc = cache->add_subcommand("gc", "Evict least-recently-used entries");
  std::uint64_t gc_max = 0;
  std::string gc_dir;
  gc->add_option("--max-bytes", gc_max, "Size budget in bytes")->required();
  gc->add_option("--cache-dir", gc_dir, "Cache directory");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  int s_port = 8080;
  std::string s_host = "127.0.0.1", s_workspace = "workspace", s_mock, s_assistant = "gpt-4o-mini";
  std::size_t s_parallel = 10;
  serve->add_option("--port", s_port, "Port");
  serve->add_option("--host", s_host, "Bind address");
  serve->add_option("--workspace", s_workspace, "Workspace directory");
  serve->add_option("--mock", s_mock, "Mock provider rules (YAML)");
  serve->add_option("--max-parallel", s_parallel, "Concurrent provider calls")->check(CLI::PositiveNumber);
  serve->add_option("--assistant-model", s_assistant, "Model for refinement, judging and decomposition");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      auto p = load_pipeline_file(v_pipeline);
      auto path = dataset_path(v_data, p, v_pipeline);
      if (!path) return fail("dataset", "no dataset: pass --data or set `dataset` to a path");
      auto d = load_dataset(*path);
      auto diags = validate_pipeline(p, d.attribute_names());
      for (const auto& diag : diags) {
        std::cout << (diag.op.empty() ? "pipeline" : diag.op) << "." << diag.field << ": " << diag.message << "\n";
      }
      if (!diags.empty()) return 1;
      std::cout << "ok: " << p.ops.size() << " operations\n";
      return 0;
    }

    if (*run) {
      auto p = load_pipeline_file(r_pipeline);
      auto path = dataset_path(r_data, p, r_pipeline);
      if (!path) return fail("dataset", "no dataset: pass --data or set `dataset` to a path");
      auto d = load_dataset(*path);
      if (auto diags = validate_pipeline(p, d.attribute_names()); !diags.empty()) {
        for (const auto& diag : diags) std::cerr << diag.op << "." << diag.field << ": " << diag.message << "\n";
        return fail("validation", std::to_string(diags.size()) + " diagnostic(s)", 1);
      }
      auto provider = make_provider(r_mock);
      llm::Gateway gateway(provider);
      OutputCache store(r_cache.empty() ? OutputCache::default_dir() : fs::path(r_cache));

      RunRequest req;
      req.run_id = "cli";
      req.fresh = r_fresh;
      if (r_sample > 0) {
        SampleSpec s;
        s.limit = r_sample;
        if (r_seed) {
          s.mode = SampleSpec::Mode::SeededRandom;
          s.seed = *r_seed;
        }
        req.sample = s;
      }
      EventLog events(req.run_id);
      Executor exec(gateway, &store, ExecutorOptions{r_parallel, r_verify, !r_judge});
      auto result = exec.execute(p, d, req, events);
      std::vector<JudgeVerdict> verdicts;
      if (r_judge) {
        verdicts = judge_run(gateway, gateway.profile_for(p.default_model), p, result, events);
        events.emit(EventKind::RunDone, {}, result.ops.size(), p.ops.size(), Value{{"status", result.status}});
        events.close();
      }

      fs::path out = r_out;
      for (const auto& op : result.ops) {
        write_text(out / op.name / "rows.jsonl", rows_to_jsonl(op.rows));
        Value viz = Value::array();
        for (const auto& spec : viz_specs_for_rows(op.rows)) viz.push_back(to_json(spec));
        write_text(out / op.name / "viz.json", viz.dump(2));
        std::cout << op.name << ": ";
        if (!op.enabled) {
          std::cout << "skipped (disabled)\n";
          continue;
        }
        std::cout << ops::format_selectivity(op.input_count, op.rows.size());
        if (op.cached) std::cout << " (cached)";
        if (!op.errors.empty()) std::cout << " [" << op.errors.size() << " errors]";
        std::cout << "\n";
      }
      for (const auto& v : verdicts) {
        std::cout << "judge " << v.op_name << ": " << (v.pass ? "pass" : "fail");
        if (!v.reasons.empty()) std::cout << " (" << v.reasons.front() << ")";
        std::cout << "\n";
      }
      Value run_json = Value::object();
      run_json["run_id"] = result.run_id;
      run_json["status"] = result.status;
      run_json["error"] = result.error;
      run_json["provider_calls"] = result.provider_calls;
      run_json["cache_reads"] = result.cache_reads;
      run_json["cache_writes"] = result.cache_writes;
      Value evs = Value::array();
      for (const auto& e : events.since(0)) evs.push_back(to_json(e));
      run_json["events"] = std::move(evs);
      write_text(out / "run.json", run_json.dump(2));

      if (r_show_viz && !result.ops.empty()) {
        for (const auto& spec : viz_specs_for_rows(result.ops.back().rows)) std::cout << render_viz_text(spec);
      }
      std::cout << "provider calls: " << result.provider_calls << "\n";
      if (result.status != "completed") return fail("run", result.error, 1);
      return 0;
    }

    if (*gc) {
      OutputCache store(gc_dir.empty() ? OutputCache::default_dir() : fs::path(gc_dir));
      auto evicted = store.gc(gc_max);
      std::cout << "evicted " << evicted << " entries; " << store.total_bytes() << " bytes remain\n";
      return 0;
    }

    if (*serve) {
      auto provider = make_provider(s_mock);
      WorkspaceOptions opts;
      opts.max_parallel = s_parallel;
      opts.assistant_model = s_assistant;
      Workspace ws(s_workspace, provider, opts);
      ApiServer server(ws);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << s_host << ":" << s_port << std::endl;
      if (!server.listen(s_host, s_port)) return fail("serve", "cannot bind " + s_host + ":" + std::to_string(s_port));
      return 0;
    }
  } catch (const DatasetError& e) {
    return fail("dataset", e.what());
  } catch (const ValidationError& e) {
    return fail("validation", e.what());
  } catch (const ProviderError& e) {
    return fail("provider", e.what());
  } catch (const std::exception& e) {
    return fail("error", e.what());
  }
  return 0;
}
