#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semforge/errors.hpp"
#include "semforge/executor.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/pipeline_spec.hpp"

namespace semforge {

enum class Directive { ChunkMapUnify, AttributeSplit, Baseline };
std::string_view to_string(Directive d);

struct CandidatePlan {
  std::string id;
  Directive directive = Directive::Baseline;
  std::vector<OperationSpec> replacement_ops;
  std::string rationale;
  double judge_pass_rate = 0.0;
  std::int64_t llm_call_estimate = 0;
  bool evaluated = false;
  std::optional<std::string> error;  // evaluation failure
};

Value to_json(const CandidatePlan& c);

class AllCandidatesFailed : public Error {
 public:
  using Error::Error;
};

/// Attribute a map's prompt reads its text from (first `input.<attr>` reference).
std::optional<std::string> source_attribute(const OperationSpec& op);

/// Pipeline with `op_name` replaced by the candidate's operations.
PipelineSpec apply_plan(const PipelineSpec& pipeline, const std::string& op_name, const CandidatePlan& plan);

/// Provider calls the plan would make on `docs` (inputs to the replaced op).
std::int64_t estimate_calls(const CandidatePlan& plan, const std::vector<Document>& docs,
                            const llm::ModelProfile& profile);

struct SelectionResult {
  CandidatePlan winner;
  std::vector<CandidatePlan> candidates;  // scored, in generation order
  PipelineSpec plan;                      // pipeline with the winner substituted
  PlanDiff diff;                          // original → plan
};

Value to_json(const SelectionResult& r);

class Decomposer {
 public:
  using LogFn = std::function<void(const std::string& line)>;

  Decomposer(llm::Gateway& gateway, llm::ModelProfile assistant_profile, std::size_t max_parallel = 10)
      : gateway_(gateway), assistant_(std::move(assistant_profile)), max_parallel_(max_parallel) {}

  /// Candidates for a semantic map (empty for other kinds): chunk_map_unify,
  /// attribute_split when the schema has >= 2 attributes, then the baseline.
  /// `dataset_attributes` is used to drop candidates that would not validate.
  std::vector<CandidatePlan> generate_candidates(const PipelineSpec& pipeline, const std::string& op_name,
                                                 const std::vector<std::string>& dataset_attributes);

  /// Runs every candidate on `sample` (inputs to the op, <= 5 docs) and judges
  /// it. Winner: highest pass rate, then fewest estimated calls, then order.
  SelectionResult select_plan(const PipelineSpec& pipeline, const std::string& op_name,
                              std::vector<CandidatePlan> candidates, const std::vector<Document>& sample,
                              const LogFn& log = {});

 private:
  std::optional<std::string> draft_prompt(const std::string& request);

  llm::Gateway& gateway_;
  llm::ModelProfile assistant_;
  std::size_t max_parallel_;
};

}  // namespace semforge
