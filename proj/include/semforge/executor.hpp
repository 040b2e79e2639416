#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semforge/cache.hpp"
#include "semforge/core_model.hpp"
#include "semforge/events.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/operators.hpp"
#include "semforge/pipeline_spec.hpp"

namespace semforge {

struct SampleSpec {
  enum class Mode { FirstN, SeededRandom };
  std::size_t limit = 10;
  Mode mode = Mode::FirstN;
  std::uint64_t seed = 0;

  std::string descriptor() const;
};

struct RunRequest {
  std::string run_id;
  std::optional<SampleSpec> sample;
  bool fresh = false;
};

RunRequest run_request_from_json(const Value& v);

/// Sampled documents in their original order.
std::vector<Document> resolve_sample(const std::vector<Document>& docs, const std::optional<SampleSpec>& sample);

struct OpResult {
  std::string name;
  OpKind kind = OpKind::Map;
  bool enabled = true;
  bool cached = false;
  std::string cache_key;
  std::size_t input_count = 0;
  std::vector<Document> rows;
  std::int64_t provider_calls = 0;
  std::vector<ops::OpError> errors;
};

struct RunResult {
  std::string run_id;
  std::string status = "completed";  // completed | failed | aborted
  std::string error;
  std::vector<Document> inputs;  // sampled dataset
  std::vector<OpResult> ops;
  std::size_t cache_reads = 0;
  std::size_t cache_writes = 0;
  std::size_t cache_mismatches = 0;  // verify mode only
  std::int64_t provider_calls = 0;

  const OpResult* find(std::string_view op_name) const;
  /// Documents that flowed into ops[index].
  const std::vector<Document>& inputs_of(std::size_t index) const;
};

/// Cache key (hex digest) per op index. A key covers the dataset fingerprint,
/// the sample, and the canonical bytes (model resolved) of every enabled op up
/// to and including that index.
std::vector<std::string> cache_keys(const PipelineSpec& p, const std::string& dataset_fingerprint,
                                    const std::string& sample_descriptor);

/// Smallest op index whose cache key differs; ops.size() of `updated` when nothing changed.
std::size_t plan_recompute(const PipelineSpec& old_spec, const PipelineSpec& updated);

struct ExecutorOptions {
  std::size_t max_parallel = 10;
  bool verify_cache = false;   // recompute on hits and compare bytes
  bool emit_run_done = true;   // callers that append post-run events emit run_done themselves
};

class Executor {
 public:
  Executor(llm::Gateway& gateway, OutputCache* cache, ExecutorOptions options = {});

  RunResult execute(const PipelineSpec& pipeline, const Dataset& dataset, const RunRequest& request,
                    EventLog& events, const std::atomic<bool>* cancel = nullptr);

  /// Runs ops on `docs` without caching or events (decomposition sandboxes).
  std::vector<Document> run_ops(const PipelineSpec& pipeline, const std::vector<OperationSpec>& ops,
                                std::vector<Document> docs);

 private:
  llm::Gateway& gateway_;
  OutputCache* cache_;
  ExecutorOptions options_;
};

Value rows_to_json(const std::vector<Document>& rows);
std::string rows_to_jsonl(const std::vector<Document>& rows);

}  // namespace semforge
