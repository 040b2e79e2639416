#pragma once

#include <optional>
#include <string>
#include <vector>

#include "semforge/events.hpp"
#include "semforge/executor.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/pipeline_spec.hpp"

namespace semforge {

inline constexpr std::size_t kJudgeSampleSize = 5;

enum class SuggestionKind { PromptFix, Decompose };
std::string_view to_string(SuggestionKind k);

struct Suggestion {
  std::string text;
  SuggestionKind kind = SuggestionKind::PromptFix;
  bool operator==(const Suggestion&) const = default;
};

struct JudgeVerdict {
  std::string run_id;
  std::string op_name;
  std::vector<std::string> sampled_row_ids;
  bool pass = true;
  std::vector<std::string> reasons;
  std::vector<Suggestion> suggestions;
  bool diagnosis_failed = false;
};

Value to_json(const JudgeVerdict& v);

/// Up to k row indices in ascending order, seeded by (run id, op name).
std::vector<std::size_t> judge_sample_indices(std::size_t row_count, const std::string& run_id,
                                              const std::string& op_name, std::size_t k = kJudgeSampleSize);

struct JudgedPair {
  Value input_excerpt;  // null when the row has no single source document
  Value output;
};

/// Single prompt asking whether sampled outputs satisfy the op's own instruction.
std::string build_judge_prompt(const OperationSpec& op, const std::vector<JudgedPair>& pairs);

/// Verdict for one op of a completed run. Absent on provider failure or an
/// unparseable reply after one re-ask. Fills reasons/suggestions via
/// diagnose_failure when the verdict is a fail.
std::optional<JudgeVerdict> judge_outputs(llm::Gateway& gateway, const llm::ModelProfile& profile,
                                          const PipelineSpec& pipeline, const RunResult& run,
                                          const std::string& op_name);

/// Judges rows produced outside a run (decomposition candidates).
std::optional<JudgeVerdict> judge_rows(llm::Gateway& gateway, const llm::ModelProfile& profile,
                                       const OperationSpec& op, const std::vector<Document>& inputs,
                                       const std::vector<Document>& outputs, const std::string& seed_id,
                                       bool diagnose);

/// Second judge call for a failed verdict; on provider/parse failure leaves
/// reasons empty and sets diagnosis_failed.
void diagnose_failure(llm::Gateway& gateway, const llm::ModelProfile& profile, const OperationSpec& op,
                      const std::vector<JudgedPair>& pairs, JudgeVerdict& verdict);

/// Judges every enabled semantic op that produced rows, emitting judge_verdict
/// events (and a notification per failing op) onto `events`.
std::vector<JudgeVerdict> judge_run(llm::Gateway& gateway, const llm::ModelProfile& profile,
                                    const PipelineSpec& pipeline, const RunResult& run, EventLog& events);

}  // namespace semforge
