#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "semforge/core_model.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/pipeline_spec.hpp"

namespace semforge::ops {

/// Hard cap on pairwise comparisons for one resolve operation.
inline constexpr std::size_t kMaxResolveComparisons = 10000;

struct OpError {
  std::string doc_id;
  std::string message;
};

/// Execution context handed to an operator. Thread-safe.
class OpContext {
 public:
  using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

  OpContext(llm::Gateway& gateway, llm::ModelProfile profile, std::size_t max_parallel = 10)
      : gateway_(gateway), profile_(std::move(profile)), max_parallel_(max_parallel) {}

  llm::Gateway& gateway() { return gateway_; }
  const llm::ModelProfile& profile() const { return profile_; }
  std::size_t max_parallel() const { return max_parallel_; }

  void on_progress(ProgressFn fn) { progress_ = std::move(fn); }
  void begin(std::size_t total);
  void step();

  void record_error(std::string doc_id, std::string message);
  std::vector<OpError> errors() const;

 private:
  llm::Gateway& gateway_;
  llm::ModelProfile profile_;
  std::size_t max_parallel_;
  ProgressFn progress_;
  mutable std::mutex mu_;
  std::size_t done_ = 0;
  std::size_t total_ = 0;
  std::vector<OpError> errors_;
};

/// Attribute that marks a document an operator failed on.
std::string error_marker(const OperationSpec& op);

/// The prompt a map/filter operator sends for `doc`. Throws tmpl::RenderError.
std::string render_document_prompt(const OperationSpec& op, const Document& doc);

std::vector<Document> run_map(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx);
std::vector<Document> run_filter(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx);
std::vector<Document> run_reduce(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx);

struct ResolveStats {
  std::size_t distinct_values = 0;
  std::size_t candidate_pairs = 0;
  std::size_t clusters = 0;
  std::size_t multi_clusters = 0;
};

std::vector<Document> run_resolve(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx,
                                  ResolveStats* stats = nullptr);

std::vector<Document> run_unnest(const OperationSpec& op, const std::vector<Document>& docs);
std::vector<Document> run_split(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx);

/// Chunk documents grouped by `_parent_id` (first-appearance order, chunk order within).
std::vector<std::vector<Document>> run_gather(const std::vector<Document>& chunks);

std::vector<Document> run_code_op(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx);

/// Dispatches on op.kind.
std::vector<Document> run_operation(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx);

/// Groups for reduce-like operators: (key, member indices). A list-valued key
/// puts the document in one group per distinct element; missing/empty ⇒ null.
std::vector<std::pair<Value, std::vector<std::size_t>>> group_documents(const std::vector<Document>& docs,
                                                                        const std::string& key);

/// Id of a reduce output document for a group key.
std::string group_document_id(const Value& key);

/// "10 in → 47 out, 4.70×"
std::string format_selectivity(std::size_t in, std::size_t out);

}  // namespace semforge::ops
