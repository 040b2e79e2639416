#include "semforge/judge.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "semforge/errors.hpp"
#include "semforge/hash.hpp"
#include "semforge/text.hpp"

namespace semforge {

namespace {

constexpr std::size_t kExcerptBytes = 600;
constexpr const char* kJudgeQuestion =
    "Do these outputs faithfully satisfy the instruction? Answer True or False as the first word of your reply.";
constexpr const char* kDiagnoseRequest =
    "List the specific reasons the outputs fail the instruction, and suggestions to improve the operation. "
    "Tag each suggestion with kind prompt_fix if rewording the prompt would help, or decompose if the task is "
    "too complex for a single operation and should be split into smaller steps.";

std::string excerpt(const std::string& s) {
  if (s.size() <= kExcerptBytes) return s;
  return s.substr(0, text::floor_boundary(s, kExcerptBytes)) + " …";
}

Value excerpt_doc(const Document& d) {
  Value out = Value::object();
  for (auto it = d.attrs.begin(); it != d.attrs.end(); ++it) {
    if (it->is_string()) out[it.key()] = excerpt(it->get<std::string>());
    else out[it.key()] = excerpt(it->dump());
  }
  return out;
}

const Document* source_of(const Document& row, const std::vector<Document>& inputs) {
  for (const auto& d : inputs) {
    if (d.id == row.id) return &d;
  }
  auto hash = row.id.rfind('#');
  if (hash != std::string::npos) {
    auto parent = row.id.substr(0, hash);
    for (const auto& d : inputs) {
      if (d.id == parent) return &d;
    }
  }
  return nullptr;
}

std::vector<JudgedPair> make_pairs(const OperationSpec& op, const std::vector<Document>& inputs,
                                   const std::vector<Document>& rows, const std::vector<std::size_t>& idx) {
  std::vector<std::string> names;
  if (op.output_schema) names = op.output_schema->names();
  std::vector<JudgedPair> pairs;
  for (auto i : idx) {
    const auto& row = rows[i];
    JudgedPair p;
    if (const auto* src = source_of(row, inputs)) p.input_excerpt = excerpt_doc(*src);
    if (names.empty()) {
      p.output = row.attrs;
    } else {
      p.output = Value::object();
      for (const auto& n : names) {
        if (row.attrs.contains(n)) p.output[n] = row.attrs[n];
      }
      if (op.reduce_key && row.attrs.contains(*op.reduce_key)) p.output[*op.reduce_key] = row.attrs[*op.reduce_key];
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::string instruction_of(const OperationSpec& op) {
  if (op.kind == OpKind::Resolve && op.resolve) {
    return "Comparison prompt:\n" + op.resolve->compare_prompt + "\n\nResolution prompt:\n" +
           op.resolve->resolution_prompt;
  }
  return op.prompt;
}

}  // namespace

std::string_view to_string(SuggestionKind k) {
  return k == SuggestionKind::Decompose ? "decompose" : "prompt_fix";
}

Value to_json(const JudgeVerdict& v) {
  Value out = Value::object();
  out["run_id"] = v.run_id;
  out["op_name"] = v.op_name;
  out["sampled_row_ids"] = v.sampled_row_ids;
  out["pass"] = v.pass;
  out["reasons"] = v.reasons;
  Value sugg = Value::array();
  for (const auto& s : v.suggestions) sugg.push_back({{"text", s.text}, {"kind", std::string(to_string(s.kind))}});
  out["suggestions"] = std::move(sugg);
  out["diagnosis_failed"] = v.diagnosis_failed;
  return out;
}

std::vector<std::size_t> judge_sample_indices(std::size_t row_count, const std::string& run_id,
                                              const std::string& op_name, std::size_t k) {
  std::vector<std::size_t> idx(row_count);
  std::iota(idx.begin(), idx.end(), 0);
  if (row_count <= k) return idx;
  Hasher h;
  auto digest = h.field(run_id).field(op_name).finish();
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed = (seed << 8) | digest[static_cast<std::size_t>(i)];
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string build_judge_prompt(const OperationSpec& op, const std::vector<JudgedPair>& pairs) {
  std::string p = "You are reviewing the results of one step in a document-processing pipeline.\n\n";
  p += "Instruction given to the model:\n" + instruction_of(op) + "\n\n";
  const auto schema = op.effective_schema();
  if (!schema.empty() && op.kind != OpKind::Resolve) {
    p += "Output schema:\n";
    for (const auto& [name, type] : schema.attributes) p += "- " + name + ": " + type.str() + "\n";
    p += "\n";
  }
  p += "Sampled results:\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    p += "\n### Result " + std::to_string(i + 1) + "\n";
    if (!pairs[i].input_excerpt.is_null()) p += "Input: " + pairs[i].input_excerpt.dump() + "\n";
    p += "Output: " + pairs[i].output.dump() + "\n";
  }
  p += "\n";
  p += kJudgeQuestion;
  return p;
}

void diagnose_failure(llm::Gateway& gateway, const llm::ModelProfile& profile, const OperationSpec& op,
                      const std::vector<JudgedPair>& pairs, JudgeVerdict& verdict) {
  OutputSchema schema;
  schema.attributes.emplace_back("reasons", SchemaType::list_of(ScalarKind::String));
  schema.attributes.emplace_back("suggestions", SchemaType::parse("list[{text: string, kind: enum[prompt_fix, decompose]}]"));
  std::vector<llm::ChatMessage> convo{
      {llm::Role::User, build_judge_prompt(op, pairs)},
      {llm::Role::Assistant, "False"},
      {llm::Role::User, kDiagnoseRequest},
  };
  try {
    auto result = gateway.complete_structured(convo, schema, profile);
    verdict.reasons.clear();
    verdict.suggestions.clear();
    for (const auto& r : result.value("reasons", Value::array())) verdict.reasons.push_back(stringify(r));
    for (const auto& s : result.value("suggestions", Value::array())) {
      Suggestion sg;
      sg.text = s.value("text", std::string{});
      sg.kind = s.value("kind", std::string{}) == "decompose" ? SuggestionKind::Decompose : SuggestionKind::PromptFix;
      verdict.suggestions.push_back(std::move(sg));
    }
  } catch (const Error&) {
    verdict.reasons.clear();
    verdict.suggestions.clear();
    verdict.diagnosis_failed = true;
  }
}

std::optional<JudgeVerdict> judge_rows(llm::Gateway& gateway, const llm::ModelProfile& profile,
                                       const OperationSpec& op, const std::vector<Document>& inputs,
                                       const std::vector<Document>& outputs, const std::string& seed_id,
                                       bool diagnose) {
  if (outputs.empty()) return std::nullopt;
  auto idx = judge_sample_indices(outputs.size(), seed_id, op.name);
  auto pairs = make_pairs(op, inputs, outputs, idx);

  JudgeVerdict v;
  v.run_id = seed_id;
  v.op_name = op.name;
  for (auto i : idx) v.sampled_row_ids.push_back(outputs[i].id);

  std::vector<llm::ChatMessage> convo{{llm::Role::User, build_judge_prompt(op, pairs)}};
  std::optional<bool> decision;
  try {
    auto reply = gateway.chat(convo, profile);
    decision = llm::parse_leading_bool(reply);
    if (!decision) {
      convo.push_back({llm::Role::Assistant, reply});
      convo.push_back({llm::Role::User, "Reply with exactly one word: True or False."});
      decision = llm::parse_leading_bool(gateway.chat(convo, profile));
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  if (!decision) return std::nullopt;
  v.pass = *decision;
  if (!v.pass && diagnose) diagnose_failure(gateway, profile, op, pairs, v);
  return v;
}

std::optional<JudgeVerdict> judge_outputs(llm::Gateway& gateway, const llm::ModelProfile& profile,
                                          const PipelineSpec& pipeline, const RunResult& run,
                                          const std::string& op_name) {
  auto index = pipeline.index_of(op_name);
  if (!index || *index >= run.ops.size()) return std::nullopt;
  const auto& result = run.ops[*index];
  return judge_rows(gateway, profile, pipeline.ops[*index], run.inputs_of(*index), result.rows, run.run_id, true);
}

std::vector<JudgeVerdict> judge_run(llm::Gateway& gateway, const llm::ModelProfile& profile,
                                    const PipelineSpec& pipeline, const RunResult& run, EventLog& events) {
  std::vector<JudgeVerdict> verdicts;
  for (std::size_t i = 0; i < run.ops.size() && i < pipeline.ops.size(); ++i) {
    const auto& op = pipeline.ops[i];
    if (!op.enabled || !is_semantic(op.kind) || run.ops[i].rows.empty()) continue;
    auto v = judge_outputs(gateway, profile, pipeline, run, op.name);
    if (!v) continue;
    events.emit(EventKind::JudgeVerdict, op.name, 0, 0, to_json(*v));
    if (!v->pass) {
      Value note = Value::object();
      note["op_name"] = op.name;
      if (v->diagnosis_failed) {
        note["message"] = "The judge flagged outputs of " + op.name + " as not satisfying its prompt.";
      } else {
        note["message"] = v->reasons.empty() ? "Outputs of " + op.name + " may be inaccurate." : v->reasons.front();
      }
      note["suggestions"] = to_json(*v)["suggestions"];
      events.emit(EventKind::Notification, op.name, 0, 0, std::move(note));
    }
    verdicts.push_back(std::move(*v));
  }
  return verdicts;
}

}  // namespace semforge
