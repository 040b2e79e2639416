#include "semforge/decompose.hpp"

#include <algorithm>
#include <mutex>

#include "semforge/judge.hpp"
#include "semforge/parallel.hpp"
#include "semforge/refinement.hpp"
#include "semforge/template_engine.hpp"

namespace semforge {

namespace {

std::string unique_name(const PipelineSpec& p, const std::string& base) {
  if (p.find(base) == nullptr) return base;
  for (int i = 2;; ++i) {
    auto name = base + "_" + std::to_string(i);
    if (p.find(name) == nullptr) return name;
  }
}

std::string schema_lines(const OutputSchema& schema) {
  std::string out;
  for (const auto& [name, type] : schema.attributes) out += "- " + name + ": " + type.str() + "\n";
  return out;
}

bool references_root(const std::string& source, std::string_view root) {
  try {
    for (const auto& r : tmpl::parse_template(source).references()) {
      if (r.root == root) return true;
    }
  } catch (const tmpl::SyntaxError&) {
  }
  return false;
}

std::string default_unify_block(const OutputSchema& schema) {
  std::string block = "\n\nResults extracted from each chunk, in document order:\n{% for chunk in inputs %}";
  for (const auto& [name, type] : schema.attributes) block += "\n" + name + ": {{ chunk." + name + " }}";
  block += "\n---{% endfor %}";
  return block;
}

}  // namespace

std::string_view to_string(Directive d) {
  switch (d) {
    case Directive::ChunkMapUnify: return "chunk_map_unify";
    case Directive::AttributeSplit: return "attribute_split";
    case Directive::Baseline: return "baseline";
  }
  return "baseline";
}

Value to_json(const CandidatePlan& c) {
  Value v = Value::object();
  v["id"] = c.id;
  v["directive"] = std::string(to_string(c.directive));
  Value ops = Value::array();
  for (const auto& op : c.replacement_ops) ops.push_back(to_json(op));
  v["replacement_ops"] = std::move(ops);
  v["rationale"] = c.rationale;
  v["judge_pass_rate"] = c.judge_pass_rate;
  v["llm_call_estimate"] = c.llm_call_estimate;
  v["evaluated"] = c.evaluated;
  v["error"] = c.error ? Value(*c.error) : Value();
  return v;
}

Value to_json(const SelectionResult& r) {
  Value v = Value::object();
  v["winner"] = to_json(r.winner);
  Value cands = Value::array();
  for (const auto& c : r.candidates) cands.push_back(to_json(c));
  v["candidates"] = std::move(cands);
  v["plan"] = to_json(r.plan);
  v["diff"] = to_json(r.diff);
  return v;
}

std::optional<std::string> source_attribute(const OperationSpec& op) {
  try {
    for (const auto& r : tmpl::parse_template(op.prompt).references()) {
      if (r.root == "input" && !r.segments.empty() && r.segments[0] != "[]") return r.segments[0];
    }
  } catch (const tmpl::SyntaxError&) {
  }
  return std::nullopt;
}

PipelineSpec apply_plan(const PipelineSpec& pipeline, const std::string& op_name, const CandidatePlan& plan) {
  PipelineSpec out = pipeline;
  auto idx = out.index_of(op_name);
  if (!idx) throw ValidationError("unknown operation: " + op_name);
  auto pos = out.ops.erase(out.ops.begin() + static_cast<std::ptrdiff_t>(*idx));
  out.ops.insert(pos, plan.replacement_ops.begin(), plan.replacement_ops.end());
  return out;
}

std::int64_t estimate_calls(const CandidatePlan& plan, const std::vector<Document>& docs,
                            const llm::ModelProfile& profile) {
  std::int64_t rows = static_cast<std::int64_t>(docs.size());
  std::int64_t calls = 0;
  std::vector<Document> current = docs;
  for (const auto& op : plan.replacement_ops) {
    switch (op.kind) {
      case OpKind::Split: {
        // Splitting is local; reuse the operator to count chunks exactly.
        auto gateway = llm::Gateway(std::make_shared<llm::MockProvider>(std::vector<llm::MockRule>{}));
        ops::OpContext ctx(gateway, profile, 1);
        current = ops::run_split(op, current, ctx);
        rows = static_cast<std::int64_t>(current.size());
        break;
      }
      case OpKind::Map:
      case OpKind::Filter:
        calls += rows;
        break;
      case OpKind::Reduce:
        if (op.reduce_key) {
          auto groups = ops::group_documents(current, *op.reduce_key);
          calls += static_cast<std::int64_t>(groups.size());
          rows = static_cast<std::int64_t>(groups.size());
        } else {
          calls += 1;
          rows = 1;
        }
        break;
      default:
        break;
    }
  }
  return calls;
}

std::optional<std::string> Decomposer::draft_prompt(const std::string& request) {
  try {
    auto reply = gateway_.chat({{llm::Role::User, request}}, assistant_);
    auto tagged = extract_tagged(reply);
    if (!tagged.prompt || tagged.prompt->empty()) return std::nullopt;
    return tagged.prompt;
  } catch (const Error&) {
    return std::nullopt;
  }
}

std::vector<CandidatePlan> Decomposer::generate_candidates(const PipelineSpec& pipeline, const std::string& op_name,
                                                           const std::vector<std::string>& dataset_attributes) {
  std::vector<CandidatePlan> out;
  const auto* op = pipeline.find(op_name);
  if (op == nullptr || op->kind != OpKind::Map || !op->output_schema) return out;
  const auto& schema = *op->output_schema;
  const auto profile = gateway_.profile_for(pipeline.resolved_model(*op));

  auto keep_if_valid = [&](CandidatePlan c) {
    if (validate_pipeline(apply_plan(pipeline, op_name, c), dataset_attributes).empty()) out.push_back(std::move(c));
  };

  if (auto source = source_attribute(*op)) {
    std::string request =
        "An operation in a document-processing pipeline is being decomposed: each document is split into chunks "
        "on attribute '" + *source + "', the operation runs on every chunk, and a final step must unify the "
        "per-chunk results into one result per document.\n\nOriginal operation prompt:\n" + op->prompt +
        "\n\nOutput schema:\n" + schema_lines(schema) +
        "\nWrite the prompt for the unify step. The chunk results are available as the list `inputs`, each "
        "element carrying the schema attributes. Reply with the prompt between <prompt> and </prompt> tags.";
    if (auto unify_prompt = draft_prompt(request)) {
      CandidatePlan c;
      c.id = "chunk_map_unify";
      c.directive = Directive::ChunkMapUnify;
      c.rationale = "Split each document into chunks of at most " +
                    std::to_string(profile.context_limit_tokens / 2) + " tokens, run " + op->name +
                    " on each chunk, then unify the chunk results per document.";

      OperationSpec split;
      split.name = unique_name(pipeline, op->name + "_split");
      split.kind = OpKind::Split;
      split.split = SplitConfig{*source, std::max<std::int64_t>(1, profile.context_limit_tokens / 2)};
      split.model = op->model;

      OperationSpec chunk = *op;
      chunk.name = unique_name(pipeline, op->name + "_chunk");

      OperationSpec unify;
      unify.name = unique_name(pipeline, op->name + "_unify");
      unify.kind = OpKind::Reduce;
      unify.reduce_key = "_parent_id";
      unify.output_schema = schema;
      unify.prompt = *unify_prompt;
      if (!references_root(unify.prompt, "inputs")) unify.prompt += default_unify_block(schema);
      unify.model = op->model;

      c.replacement_ops = {split, chunk, unify};
      keep_if_valid(std::move(c));
    }
  }

  if (schema.attributes.size() >= 2) {
    CandidatePlan c;
    c.id = "attribute_split";
    c.directive = Directive::AttributeSplit;
    c.rationale = "Extract each of the " + std::to_string(schema.attributes.size()) +
                  " output attributes with its own focused operation, then merge them.";
    bool ok = true;
    std::string merge = "{";
    for (const auto& [name, type] : schema.attributes) {
      std::string request =
          "An operation in a document-processing pipeline extracts several attributes at once and is being split "
          "into one operation per attribute.\n\nOriginal operation prompt:\n" + op->prompt +
          "\n\nOutput schema:\n" + schema_lines(schema) + "\nWrite a prompt that extracts only the attribute '" +
          name + "' (" + type.str() + "). Keep the same template references to `input`. Reply with the prompt "
          "between <prompt> and </prompt> tags.";
      auto drafted = draft_prompt(request);
      if (!drafted) {
        ok = false;
        break;
      }
      OperationSpec part = *op;
      part.name = unique_name(pipeline, op->name + "_" + name);
      part.prompt = *drafted;
      part.output_schema = OutputSchema{{{name, type}}};
      c.replacement_ops.push_back(std::move(part));
      if (merge.size() > 1) merge += ", ";
      merge += name + ": input." + name;
    }
    if (ok) {
      OperationSpec m;
      m.name = unique_name(pipeline, op->name + "_merge");
      m.kind = OpKind::CodeMap;
      m.code_expr = merge + "}";
      c.replacement_ops.push_back(std::move(m));
      keep_if_valid(std::move(c));
    }
  }

  CandidatePlan base;
  base.id = "baseline";
  base.directive = Directive::Baseline;
  base.rationale = "Keep " + op->name + " unchanged.";
  base.replacement_ops = {*op};
  out.push_back(std::move(base));
  return out;
}

SelectionResult Decomposer::select_plan(const PipelineSpec& pipeline, const std::string& op_name,
                                        std::vector<CandidatePlan> candidates, const std::vector<Document>& sample,
                                        const LogFn& log) {
  const auto* op = pipeline.find(op_name);
  if (op == nullptr) throw ValidationError("unknown operation: " + op_name);
  if (candidates.empty()) throw AllCandidatesFailed("no candidate plans");

  std::vector<Document> docs(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(
                                                                  std::min(kJudgeSampleSize, sample.size())));
  std::mutex log_mu;
  auto emit = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard lock(log_mu);
    log(line);
  };
  emit("Evaluating " + std::to_string(candidates.size()) + " candidate plans for " + op_name + " on " +
       std::to_string(docs.size()) + " sample documents");

  const auto judge_profile = gateway_.profile_for(pipeline.default_model);
  Executor sandbox(gateway_, nullptr, ExecutorOptions{max_parallel_, false, false});

  parallel_for(candidates.size(), max_parallel_, [&](std::size_t i) {
    auto& c = candidates[i];
    c.llm_call_estimate = estimate_calls(c, docs, gateway_.profile_for(pipeline.resolved_model(*op)));
    emit("[" + c.id + "] running " + std::to_string(c.replacement_ops.size()) + " operation(s), about " +
         std::to_string(c.llm_call_estimate) + " LLM calls");
    try {
      auto rows = sandbox.run_ops(pipeline, c.replacement_ops, docs);
      auto verdict = judge_rows(gateway_, judge_profile, *op, docs, rows, "decompose:" + op_name + ":" + c.id, false);
      if (!verdict) {
        c.error = "judge returned no verdict";
        emit("[" + c.id + "] judge returned no verdict");
        return;
      }
      c.judge_pass_rate = verdict->pass ? 1.0 : 0.0;
      c.evaluated = true;
      emit("[" + c.id + "] judge verdict: " + (verdict->pass ? "pass" : "fail"));
    } catch (const std::exception& e) {
      c.error = e.what();
      emit("[" + c.id + "] failed: " + std::string(e.what()));
    }
  });

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (!c.evaluated) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = candidates[*best];
    if (c.judge_pass_rate > b.judge_pass_rate ||
        (c.judge_pass_rate == b.judge_pass_rate && c.llm_call_estimate < b.llm_call_estimate)) {
      best = i;
    }
  }
  if (!best) {
    emit("All candidate plans failed; keeping the original pipeline");
    throw AllCandidatesFailed("every candidate plan failed for " + op_name);
  }

  SelectionResult r;
  r.winner = candidates[*best];
  r.candidates = std::move(candidates);
  r.plan = apply_plan(pipeline, op_name, r.winner);
  r.diff = diff_pipelines(pipeline, r.plan);
  emit("Selected " + r.winner.id + " (pass rate " + std::to_string(r.winner.judge_pass_rate).substr(0, 4) + ", " +
       std::to_string(r.winner.llm_call_estimate) + " estimated calls)");
  return r;
}

}  // namespace semforge
