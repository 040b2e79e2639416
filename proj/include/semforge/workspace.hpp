#pragma once

// Server-side state: datasets, pipelines, notes, refinement sessions, runs,
// decompositions, and the output cache. Everything but runs and
// decompositions is persisted under the workspace root:
//
//   datasets/<id>.json   {id, source_name, docs}
//   pipelines/<id>.json  pipeline JSON
//   notes.jsonl          note records
//   sessions/<id>.json   refinement sessions
//   cache/               output cache (unless SEMFORGE_CACHE_DIR is set)

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "semforge/cache.hpp"
#include "semforge/core_model.hpp"
#include "semforge/decompose.hpp"
#include "semforge/events.hpp"
#include "semforge/executor.hpp"
#include "semforge/judge.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/notes.hpp"
#include "semforge/pipeline_spec.hpp"
#include "semforge/refinement.hpp"

namespace semforge {

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

struct WorkspaceOptions {
  std::size_t max_parallel = 10;
  std::string assistant_model = "gpt-4o-mini";
  std::optional<std::filesystem::path> cache_dir;  // default: $SEMFORGE_CACHE_DIR or <root>/cache
};

struct RunState {
  std::string id;
  std::string pipeline_id;
  PipelineSpec pipeline;  // snapshot taken at submission
  std::shared_ptr<EventLog> events;
  std::atomic<bool> cancel{false};
  std::atomic<bool> finished{false};
  mutable std::mutex mu;
  std::optional<RunResult> result;
  std::vector<JudgeVerdict> verdicts;
  std::jthread worker;
};

struct DecompositionState {
  std::string id;
  std::string pipeline_id;
  std::string op_name;
  std::shared_ptr<EventLog> events;
  std::atomic<bool> finished{false};
  mutable std::mutex mu;
  std::optional<SelectionResult> result;
  std::string error;
  std::jthread worker;
};

struct QueryParams {
  std::size_t page = 0;
  std::size_t page_size = 50;
  std::optional<std::string> sort;
  bool descending = false;
  std::optional<std::string> filter_attribute;
  std::string filter_op = "equals";  // equals | contains
  std::string filter_value;
  std::optional<std::string> search;
  bool include_prompts = false;
};

/// Rows of one op after filter/search/sort (all rows, unpaged). Throws
/// ValidationError on an unknown sort column.
std::vector<Document> select_rows(const std::vector<Document>& rows, const QueryParams& q);

class Workspace {
 public:
  Workspace(std::filesystem::path root, std::shared_ptr<llm::Provider> provider, WorkspaceOptions options = {});
  ~Workspace();

  llm::Gateway& gateway() { return gateway_; }
  OutputCache& cache() { return *cache_; }
  NoteStore& notes() { return notes_; }
  const WorkspaceOptions& options() const { return options_; }

  // Datasets
  Dataset ingest_dataset(std::string_view payload, std::optional<DatasetFormat> format, std::string source_name);
  std::optional<Dataset> dataset(const std::string& id) const;
  std::vector<std::string> dataset_ids() const;

  // Pipelines
  struct SaveResult {
    PipelineSpec pipeline;
    std::vector<Diagnostic> diagnostics;
    std::optional<std::size_t> first_dirty;  // vs the previously saved version
  };
  SaveResult save_pipeline(PipelineSpec p);
  std::optional<PipelineSpec> pipeline(const std::string& id) const;
  std::vector<std::string> pipeline_ids() const;
  std::vector<Diagnostic> validate(const PipelineSpec& p) const;

  // Runs
  std::shared_ptr<RunState> start_run(const std::string& pipeline_id, RunRequest req, bool judge = true);
  std::shared_ptr<RunState> run(const std::string& id) const;
  std::shared_ptr<RunState> latest_run(const std::string& pipeline_id) const;
  /// Blocks until the run has emitted run_done.
  void wait(const RunState& r) const;
  Value query_outputs(const std::string& run_id, const std::string& op_name, const QueryParams& q) const;
  std::optional<std::string> row_prompt(const std::string& run_id, const std::string& op_name,
                                        const std::string& row_id) const;

  // Notes
  std::vector<Note> query_notes(const NoteFilter& f, const std::optional<std::string>& pipeline_id) const;

  // Refinement
  RefinementSession start_refinement(const std::string& pipeline_id, const std::string& op_name,
                                     std::optional<std::string> extra_instructions);
  RefinementSession session(const std::string& id) const;
  RefinementSession refine(const std::string& session_id, const std::string& feedback);
  RefinementSession manual_edit(const std::string& session_id, const std::string& prompt,
                                std::optional<OutputSchema> schema);
  RefinementSession checkout_node(const std::string& session_id, const std::string& node_id);
  SaveResult accept_revision(const std::string& session_id, const std::string& node_id);

  // Decomposition
  std::shared_ptr<DecompositionState> start_decomposition(const std::string& pipeline_id, const std::string& op_name);
  std::shared_ptr<DecompositionState> decomposition(const std::string& id) const;
  void wait(const DecompositionState& d) const;
  SaveResult accept_plan(const std::string& pipeline_id, const std::string& decomposition_id);

  /// Event stream by id: runs and decompositions share one id space.
  std::shared_ptr<EventLog> events(const std::string& id) const;

  // Assistant
  std::string assistant_chat(const std::vector<llm::ChatMessage>& messages,
                             const std::optional<std::string>& pipeline_id);

 private:
  std::string next_id(const std::string& prefix);
  void persist_session(const RefinementSession& s) const;
  void load();
  std::vector<Document> op_sample_inputs(const PipelineSpec& p, std::size_t op_index, std::size_t n);
  std::vector<Document> refinement_pool(const PipelineSpec& p, const std::string& op_name);

  std::filesystem::path root_;
  WorkspaceOptions options_;
  llm::Gateway gateway_;
  std::unique_ptr<OutputCache> cache_;
  NoteStore notes_;

  mutable std::mutex mu_;
  std::map<std::string, Dataset> datasets_;
  std::map<std::string, PipelineSpec> pipelines_;
  std::map<std::string, RefinementSession> sessions_;
  std::map<std::string, std::shared_ptr<RunState>> runs_;
  std::vector<std::string> run_order_;
  std::map<std::string, std::shared_ptr<DecompositionState>> decompositions_;
  std::map<std::string, std::uint64_t> counters_;
};

}  // namespace semforge
