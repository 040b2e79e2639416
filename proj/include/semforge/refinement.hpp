#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semforge/core_model.hpp"
#include "semforge/errors.hpp"
#include "semforge/llm_gateway.hpp"
#include "semforge/notes.hpp"
#include "semforge/pipeline_spec.hpp"

namespace semforge {

inline constexpr std::size_t kRefineSampleDocs = 5;
inline constexpr std::string_view kPromptGuidelines =
    "be clear, unambiguous, and provide few-shot examples if possible";

class TagParseError : public Error {
 public:
  explicit TagParseError(std::string which, const std::string& detail = "unbalanced tags")
      : Error("<" + which + ">: " + detail), which_(std::move(which)) {}
  const std::string& which_tag() const { return which_; }

 private:
  std::string which_;
};

class UnknownNode : public Error {
 public:
  explicit UnknownNode(const std::string& id) : Error("unknown revision node: " + id) {}
};

class NoSemanticOp : public Error {
 public:
  explicit NoSemanticOp(const std::string& op) : Error("operation is not a semantic operation: " + op) {}
};

struct TaggedReply {
  std::optional<std::string> prompt;
  std::optional<OutputSchema> schema;
};

/// Text of the first <prompt>…</prompt> pair (trimmed) and the schema inside
/// <schema>…</schema>. Throws TagParseError for nested, unclosed, or stray tags.
TaggedReply extract_tagged(std::string_view reply);

enum class RevisionOrigin { Original, AiSuggested, ManualEdit, UserFeedback };
std::string_view to_string(RevisionOrigin o);

struct RevisionNode {
  std::string id;
  std::optional<std::string> parent;
  std::string prompt;
  std::optional<OutputSchema> schema_change;
  RevisionOrigin origin = RevisionOrigin::Original;
  std::int64_t created_at = 0;
};

struct RefinementSession {
  std::string id;
  std::string pipeline_id;
  std::string operation_id;
  std::vector<llm::ChatMessage> conversation;
  std::vector<llm::Span> spans;  // sample documents inside conversation[0]
  std::vector<RevisionNode> tree;
  std::string active_node;
  std::string last_discussed;  // node the assistant last saw as current

  const RevisionNode& node(const std::string& id) const;
  const RevisionNode& root() const { return tree.front(); }
  const RevisionNode& active() const { return node(active_node); }
  std::vector<const RevisionNode*> children(const std::string& id) const;
};

Value to_json(const RevisionNode& n);
Value to_json(const RefinementSession& s);
RefinementSession session_from_json(const Value& v);

/// Prompt a refinement session edits: the op prompt, or a resolve op's comparison prompt.
std::string refinable_prompt(const OperationSpec& op);

struct SeedInputs {
  std::vector<Document> documents;  // candidates for the sample and for note row_refs
  std::vector<Note> notes;          // all notes; relevant ones are selected here
  std::optional<std::string> extra_instructions;
};

/// Notes on the operation, plus notes on any of its output attributes.
std::vector<Note> relevant_notes(const OperationSpec& op, const std::vector<Note>& notes);

/// Seed message (conversation[0]) and the spans of its embedded documents.
std::pair<std::string, std::vector<llm::Span>> build_seed_message(const OperationSpec& op, const SeedInputs& in);

class Refiner {
 public:
  Refiner(llm::Gateway& gateway, llm::ModelProfile profile) : gateway_(gateway), profile_(std::move(profile)) {}

  RefinementSession start_session(const PipelineSpec& pipeline, const std::string& op_name, const SeedInputs& in,
                                  std::string session_id);
  const RevisionNode& refine(RefinementSession& s, const std::string& feedback);

 private:
  std::string ask(const RefinementSession& s, const std::vector<llm::ChatMessage>& convo);

  llm::Gateway& gateway_;
  llm::ModelProfile profile_;
};

const RevisionNode& apply_manual_edit(RefinementSession& s, const std::string& edited_prompt,
                                      std::optional<OutputSchema> schema = std::nullopt);
void checkout(RefinementSession& s, const std::string& node_id);

/// The pipeline with `node_id`'s prompt (and schema, when it carries one) written into the op.
PipelineSpec accept_revision(const PipelineSpec& pipeline, const RefinementSession& s, const std::string& node_id);

struct DiffLine {
  char op = ' ';  // ' ' kept, '-' removed, '+' added
  std::string text;
  bool operator==(const DiffLine&) const = default;
};

/// Line-based longest-common-subsequence diff.
std::vector<DiffLine> line_diff(std::string_view a, std::string_view b);
Value to_json(const std::vector<DiffLine>& diff);

}  // namespace semforge
