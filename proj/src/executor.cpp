#include "semforge/executor.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "semforge/errors.hpp"
#include "semforge/hash.hpp"

namespace semforge {

std::string SampleSpec::descriptor() const {
  if (mode == Mode::FirstN) return "first_n:" + std::to_string(limit);
  return "seeded_random:" + std::to_string(limit) + ":" + std::to_string(seed);
}

RunRequest run_request_from_json(const Value& v) {
  RunRequest r;
  if (!v.is_object()) return r;
  r.run_id = v.value("run_id", std::string{});
  r.fresh = v.value("fresh", false);
  if (auto it = v.find("sample"); it != v.end() && !it->is_null()) {
    SampleSpec s;
    if (it->is_number_integer()) {
      s.limit = it->get<std::int64_t>() < 1 ? 0 : it->get<std::size_t>();
    } else if (it->is_object()) {
      auto limit = it->value("limit", std::int64_t{10});
      s.limit = limit < 1 ? 0 : static_cast<std::size_t>(limit);
      auto mode = it->value("mode", std::string("first_n"));
      if (mode == "seeded_random") {
        s.mode = SampleSpec::Mode::SeededRandom;
        s.seed = it->value("seed", std::uint64_t{0});
      } else if (mode != "first_n") {
        throw ValidationError("unknown sample mode: " + mode);
      }
    } else {
      throw ValidationError("sample must be an integer or an object");
    }
    if (s.limit < 1) throw ValidationError("sample limit must be >= 1");
    r.sample = s;
  }
  return r;
}

std::vector<Document> resolve_sample(const std::vector<Document>& docs, const std::optional<SampleSpec>& sample) {
  if (!sample || sample->limit >= docs.size()) return docs;
  if (sample->mode == SampleSpec::Mode::FirstN) {
    return {docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(sample->limit)};
  }
  std::vector<std::size_t> idx(docs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(sample->seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(sample->limit);
  std::sort(idx.begin(), idx.end());
  std::vector<Document> out;
  for (auto i : idx) out.push_back(docs[i]);
  return out;
}

const OpResult* RunResult::find(std::string_view op_name) const {
  for (const auto& op : ops) {
    if (op.name == op_name) return &op;
  }
  return nullptr;
}

const std::vector<Document>& RunResult::inputs_of(std::size_t index) const {
  return index == 0 ? inputs : ops.at(index - 1).rows;
}

std::vector<std::string> cache_keys(const PipelineSpec& p, const std::string& dataset_fingerprint,
                                    const std::string& sample_descriptor) {
  std::vector<std::string> keys;
  std::vector<std::string> prefix;  // canonical bytes of enabled ops so far
  for (std::size_t i = 0; i < p.ops.size(); ++i) {
    const auto& op = p.ops[i];
    if (op.enabled) {
      auto resolved = op;
      resolved.model = p.resolved_model(op);
      prefix.push_back(canonical_serialize(resolved));
    }
    Hasher h;
    h.field("semforge-cache-v1").field(dataset_fingerprint).field(sample_descriptor);
    h.field(static_cast<std::uint64_t>(prefix.size()));
    for (const auto& bytes : prefix) h.field(bytes);
    h.field(static_cast<std::uint64_t>(i)).field(static_cast<std::uint64_t>(op.enabled ? 1 : 0));
    keys.push_back(to_hex(h.finish()));
  }
  return keys;
}

std::size_t plan_recompute(const PipelineSpec& old_spec, const PipelineSpec& updated) {
  auto a = cache_keys(old_spec, "", "all");
  auto b = cache_keys(updated, "", "all");
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (i >= a.size() || a[i] != b[i]) return i;
  }
  return b.size();
}

Value rows_to_json(const std::vector<Document>& rows) {
  Value out = Value::array();
  for (const auto& d : rows) out.push_back(document_to_json(d));
  return out;
}

std::string rows_to_jsonl(const std::vector<Document>& rows) {
  std::string out;
  for (const auto& d : rows) {
    out += document_to_json(d).dump();
    out += '\n';
  }
  return out;
}

Executor::Executor(llm::Gateway& gateway, OutputCache* cache, ExecutorOptions options)
    : gateway_(gateway), cache_(cache), options_(options) {}

namespace {

struct PinGuard {
  OutputCache* cache;
  std::vector<std::string> keys;
  PinGuard(OutputCache* c, std::vector<std::string> k) : cache(c), keys(std::move(k)) {
    if (cache) for (const auto& key : keys) cache->pin(key);
  }
  ~PinGuard() {
    if (cache) for (const auto& key : keys) cache->unpin(key);
  }
};

std::vector<Document> op_inputs(const OperationSpec& op, const std::vector<Document>& current) {
  if (op.sample_limit && *op.sample_limit >= 0 && static_cast<std::size_t>(*op.sample_limit) < current.size()) {
    return {current.begin(), current.begin() + *op.sample_limit};
  }
  return current;
}

}  // namespace

RunResult Executor::execute(const PipelineSpec& pipeline, const Dataset& dataset, const RunRequest& request,
                            EventLog& events, const std::atomic<bool>* cancel) {
  RunResult result;
  result.run_id = request.run_id.empty() ? events.run_id() : request.run_id;
  result.inputs = resolve_sample(dataset.docs, request.sample);

  const std::string descriptor = request.sample ? request.sample->descriptor() : "all";
  const auto keys = cache_keys(pipeline, dataset_fingerprint(dataset.docs), descriptor);
  PinGuard pins(cache_, keys);
  const auto calls_at_start = gateway_.calls();

  std::vector<Document> current = result.inputs;
  try {
    for (std::size_t i = 0; i < pipeline.ops.size(); ++i) {
      if (cancel != nullptr && cancel->load()) throw RunAborted("run cancelled");
      const auto& op = pipeline.ops[i];
      OpResult r;
      r.name = op.name;
      r.kind = op.kind;
      r.enabled = op.enabled;
      r.cache_key = keys[i];
      r.input_count = current.size();
      if (!op.enabled) {
        r.rows = current;
        result.ops.push_back(std::move(r));
        continue;
      }

      auto inputs = op_inputs(op, current);
      r.input_count = inputs.size();

      std::optional<std::vector<Document>> hit;
      if (!request.fresh && cache_ != nullptr) {
        hit = cache_->get(keys[i]);
        if (hit) ++result.cache_reads;
      }

      auto compute = [&](bool emit) {
        ops::OpContext ctx(gateway_, gateway_.profile_for(pipeline.resolved_model(op)), options_.max_parallel);
        if (emit) {
          ctx.on_progress([&](std::size_t done, std::size_t total) {
            events.emit(EventKind::DocDone, op.name, done, total);
          });
        }
        auto rows = ops::run_operation(op, inputs, ctx);
        return std::make_pair(std::move(rows), ctx.errors());
      };

      if (hit) {
        r.cached = true;
        r.rows = std::move(*hit);
        events.emit(EventKind::OpCached, op.name, r.rows.size(), r.input_count,
                    Value{{"selectivity", ops::format_selectivity(r.input_count, r.rows.size())}});
        if (options_.verify_cache) {
          auto [fresh_rows, errs] = compute(false);
          if (rows_to_jsonl(fresh_rows) != rows_to_jsonl(r.rows)) {
            ++result.cache_mismatches;
            events.emit(EventKind::Error, op.name, 0, 0, Value{{"message", "cache entry differs from recomputation"}});
            r.rows = std::move(fresh_rows);
          }
        }
      } else {
        events.emit(EventKind::OpStarted, op.name, 0, inputs.size());
        auto before = gateway_.calls();
        auto [rows, errs] = compute(true);
        r.provider_calls = gateway_.calls() - before;
        r.rows = std::move(rows);
        r.errors = std::move(errs);
        for (const auto& e : r.errors) {
          events.emit(EventKind::Error, op.name, 0, 0, Value{{"doc_id", e.doc_id}, {"message", e.message}});
        }
        if (cache_ != nullptr) {
          cache_->put(keys[i], r.rows);
          ++result.cache_writes;
        }
        events.emit(EventKind::OpDone, op.name, r.rows.size(), r.input_count,
                    Value{{"selectivity", ops::format_selectivity(r.input_count, r.rows.size())},
                          {"provider_calls", r.provider_calls}});
      }
      current = r.rows;
      result.ops.push_back(std::move(r));
    }
  } catch (const RunAborted& e) {
    result.status = "aborted";
    result.error = e.what();
    events.emit(EventKind::Error, {}, 0, 0, Value{{"message", result.error}});
  } catch (const std::exception& e) {
    result.status = "failed";
    result.error = e.what();
    std::string op_name = result.ops.size() < pipeline.ops.size() ? pipeline.ops[result.ops.size()].name : "";
    events.emit(EventKind::Error, op_name, 0, 0, Value{{"message", result.error}});
  }
  result.provider_calls = gateway_.calls() - calls_at_start;
  if (options_.emit_run_done) {
    events.emit(EventKind::RunDone, {}, result.ops.size(), pipeline.ops.size(), Value{{"status", result.status}});
    events.close();
  }
  return result;
}

std::vector<Document> Executor::run_ops(const PipelineSpec& pipeline, const std::vector<OperationSpec>& ops,
                                        std::vector<Document> docs) {
  for (const auto& op : ops) {
    if (!op.enabled) continue;
    ops::OpContext ctx(gateway_, gateway_.profile_for(pipeline.resolved_model(op)), options_.max_parallel);
    docs = ops::run_operation(op, op_inputs(op, docs), ctx);
  }
  return docs;
}

}  // namespace semforge
