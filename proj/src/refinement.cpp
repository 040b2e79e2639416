#include "semforge/refinement.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "semforge/text.hpp"

namespace semforge {

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct TagMatch {
  std::size_t pos;
  bool open;
};

std::vector<TagMatch> scan_tags(std::string_view s, std::string_view name) {
  const std::string open = "<" + std::string(name) + ">";
  const std::string close = "</" + std::string(name) + ">";
  std::vector<TagMatch> out;
  for (std::size_t i = s.find('<'); i != std::string_view::npos; i = s.find('<', i + 1)) {
    if (s.compare(i, open.size(), open) == 0) out.push_back({i, true});
    else if (s.compare(i, close.size(), close) == 0) out.push_back({i, false});
  }
  return out;
}

/// Content of the first pair, after checking that the tags alternate open/close.
std::optional<std::string> extract_one(std::string_view s, std::string_view name) {
  auto tags = scan_tags(s, name);
  if (tags.empty()) return std::nullopt;
  const std::string which(name);
  for (std::size_t i = 0; i < tags.size(); ++i) {
    bool expect_open = i % 2 == 0;
    if (tags[i].open != expect_open) {
      throw TagParseError(which, expect_open ? "closing tag without an opening tag" : "nested opening tag");
    }
  }
  if (tags.size() % 2 != 0) throw TagParseError(which, "unclosed tag");
  auto start = tags[0].pos + name.size() + 2;
  return text::trim(s.substr(start, tags[1].pos - start));
}

std::string strip_fences(std::string s) {
  s = text::trim(s);
  if (s.rfind("```", 0) == 0) {
    auto nl = s.find('\n');
    s = nl == std::string::npos ? std::string{} : s.substr(nl + 1);
    auto end = s.rfind("```");
    if (end != std::string::npos) s = s.substr(0, end);
  }
  return text::trim(s);
}

std::string schema_lines(const OutputSchema& schema) {
  std::string out;
  for (const auto& [name, type] : schema.attributes) out += "- " + name + ": " + type.str() + "\n";
  return out;
}

std::string next_node_id(const RefinementSession& s) { return "r" + std::to_string(s.tree.size()); }

std::vector<llm::ChatMessage> without_spans(const std::vector<llm::ChatMessage>& convo,
                                            const std::vector<llm::Span>& spans) {
  auto out = convo;
  auto sorted = spans;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.start > b.start; });
  for (const auto& sp : sorted) out[0].content.replace(sp.start, sp.end - sp.start, "(omitted)");
  return out;
}

}  // namespace

TaggedReply extract_tagged(std::string_view reply) {
  TaggedReply r;
  r.prompt = extract_one(reply, "prompt");
  if (auto raw = extract_one(reply, "schema")) {
    try {
      r.schema = schema_from_json(Value::parse(strip_fences(*raw)));
    } catch (const std::exception& e) {
      throw TagParseError("schema", std::string("invalid schema: ") + e.what());
    }
    if (auto problems = schema_problems(*r.schema); !problems.empty()) throw TagParseError("schema", problems.front());
  }
  return r;
}

std::string_view to_string(RevisionOrigin o) {
  switch (o) {
    case RevisionOrigin::Original: return "original";
    case RevisionOrigin::AiSuggested: return "ai_suggested";
    case RevisionOrigin::ManualEdit: return "manual_edit";
    case RevisionOrigin::UserFeedback: return "user_feedback";
  }
  return "original";
}

namespace {

RevisionOrigin origin_from_string(std::string_view s) {
  if (s == "ai_suggested") return RevisionOrigin::AiSuggested;
  if (s == "manual_edit") return RevisionOrigin::ManualEdit;
  if (s == "user_feedback") return RevisionOrigin::UserFeedback;
  return RevisionOrigin::Original;
}

}  // namespace

const RevisionNode& RefinementSession::node(const std::string& node_id) const {
  for (const auto& n : tree) {
    if (n.id == node_id) return n;
  }
  throw UnknownNode(node_id);
}

std::vector<const RevisionNode*> RefinementSession::children(const std::string& node_id) const {
  std::vector<const RevisionNode*> out;
  for (const auto& n : tree) {
    if (n.parent == node_id) out.push_back(&n);
  }
  return out;
}

Value to_json(const RevisionNode& n) {
  Value v = Value::object();
  v["id"] = n.id;
  v["parent"] = n.parent ? Value(*n.parent) : Value();
  v["prompt"] = n.prompt;
  v["schema_change"] = n.schema_change ? schema_to_json(*n.schema_change) : Value();
  v["origin"] = std::string(to_string(n.origin));
  v["created_at"] = n.created_at;
  return v;
}

Value to_json(const RefinementSession& s) {
  Value v = Value::object();
  v["id"] = s.id;
  v["pipeline_id"] = s.pipeline_id;
  v["operation_id"] = s.operation_id;
  Value convo = Value::array();
  for (const auto& m : s.conversation) convo.push_back(llm::to_json(m));
  v["conversation"] = std::move(convo);
  Value spans = Value::array();
  for (const auto& sp : s.spans) spans.push_back({sp.start, sp.end});
  v["spans"] = std::move(spans);
  Value tree = Value::array();
  for (const auto& n : s.tree) tree.push_back(to_json(n));
  v["tree"] = std::move(tree);
  v["active_node"] = s.active_node;
  v["last_discussed"] = s.last_discussed;
  return v;
}

RefinementSession session_from_json(const Value& v) {
  RefinementSession s;
  s.id = v.at("id").get<std::string>();
  s.pipeline_id = v.value("pipeline_id", std::string{});
  s.operation_id = v.at("operation_id").get<std::string>();
  for (const auto& m : v.at("conversation")) s.conversation.push_back(llm::message_from_json(m));
  for (const auto& sp : v.value("spans", Value::array())) {
    s.spans.push_back({sp.at(0).get<std::size_t>(), sp.at(1).get<std::size_t>()});
  }
  for (const auto& n : v.at("tree")) {
    RevisionNode node;
    node.id = n.at("id").get<std::string>();
    if (!n.at("parent").is_null()) node.parent = n.at("parent").get<std::string>();
    node.prompt = n.at("prompt").get<std::string>();
    if (!n.at("schema_change").is_null()) node.schema_change = schema_from_json(n.at("schema_change"));
    node.origin = origin_from_string(n.at("origin").get<std::string>());
    node.created_at = n.value("created_at", std::int64_t{0});
    s.tree.push_back(std::move(node));
  }
  s.active_node = v.at("active_node").get<std::string>();
  s.last_discussed = v.value("last_discussed", s.active_node);
  return s;
}

std::string refinable_prompt(const OperationSpec& op) {
  if (op.kind == OpKind::Resolve && op.resolve) return op.resolve->compare_prompt;
  return op.prompt;
}

std::vector<Note> relevant_notes(const OperationSpec& op, const std::vector<Note>& notes) {
  std::set<std::string> outputs;
  if (op.output_schema) {
    for (const auto& n : op.output_schema->names()) outputs.insert(n);
  }
  std::vector<Note> out;
  for (const auto& n : notes) {
    if (n.operation_id == op.name || (!n.attribute.empty() && outputs.contains(n.attribute))) out.push_back(n);
  }
  return out;
}

std::pair<std::string, std::vector<llm::Span>> build_seed_message(const OperationSpec& op, const SeedInputs& in) {
  std::string msg;
  std::vector<llm::Span> spans;
  msg += "You are helping a user improve the prompt of one operation in a document-processing pipeline.\n\n";
  msg += "Operation: " + op.name + " (" + std::string(to_string(op.kind)) + ")\n\n";
  msg += "Current prompt:\n" + refinable_prompt(op) + "\n\n";
  const auto schema = op.effective_schema();
  if (!schema.empty() && op.kind != OpKind::Resolve) msg += "Output schema:\n" + schema_lines(schema) + "\n";

  std::vector<std::string> shown;
  std::size_t n_sample = std::min(kRefineSampleDocs, in.documents.size());
  if (n_sample > 0) {
    msg += "Sample documents:\n";
    for (std::size_t i = 0; i < n_sample; ++i) {
      const auto& d = in.documents[i];
      msg += "--- Document " + d.id + " ---\n";
      spans.push_back(llm::append_span(msg, d.attrs.dump()));
      msg += "\n";
      shown.push_back(d.id);
    }
    msg += "\n";
  }

  auto notes = relevant_notes(op, in.notes);
  if (!notes.empty()) {
    msg += "User notes on this operation's outputs:\n";
    for (const auto& n : notes) {
      msg += "-";
      if (n.tag) msg += " [" + std::string(to_string(*n.tag)) + "]";
      if (!n.attribute.empty()) msg += " (attribute " + n.attribute + ")";
      if (n.row_ref) msg += " (document " + *n.row_ref + ")";
      msg += " " + n.comment + "\n";
    }
    msg += "\n";
    bool header = false;
    for (const auto& n : notes) {
      if (!n.row_ref || std::find(shown.begin(), shown.end(), *n.row_ref) != shown.end()) continue;
      auto it = std::find_if(in.documents.begin(), in.documents.end(),
                             [&](const Document& d) { return d.id == *n.row_ref; });
      if (it == in.documents.end()) continue;
      if (!header) {
        msg += "Documents referenced by notes:\n";
        header = true;
      }
      msg += "--- Document " + it->id + " ---\n";
      spans.push_back(llm::append_span(msg, it->attrs.dump()));
      msg += "\n";
      shown.push_back(it->id);
    }
    if (header) msg += "\n";
  }

  msg += "Guidelines for the new prompt: " + std::string(kPromptGuidelines) + ".\n";
  msg += "Reply with the improved prompt between <prompt> and </prompt> tags. If the output schema should "
         "change, also give the new schema between <schema> and </schema> tags as a JSON object mapping "
         "attribute names to types.\n";
  if (in.extra_instructions && !text::trim(*in.extra_instructions).empty()) {
    msg += "\nAdditional instructions from the user:\n" + *in.extra_instructions + "\n";
  }
  return {msg, spans};
}

std::string Refiner::ask(const RefinementSession& s, const std::vector<llm::ChatMessage>& convo) {
  std::vector<llm::ChatMessage> fitted;
  try {
    fitted = llm::fit_to_context(convo, s.spans, profile_.context_limit_tokens, profile_).messages;
  } catch (const BudgetInfeasible&) {
    fitted = without_spans(convo, s.spans);
  }
  return gateway_.chat(fitted, profile_);
}

RefinementSession Refiner::start_session(const PipelineSpec& pipeline, const std::string& op_name,
                                         const SeedInputs& in, std::string session_id) {
  const auto* op = pipeline.find(op_name);
  if (op == nullptr) throw ValidationError("unknown operation: " + op_name);
  if (!is_semantic(op->kind)) throw NoSemanticOp(op_name);

  RefinementSession s;
  s.id = std::move(session_id);
  s.pipeline_id = pipeline.id;
  s.operation_id = op_name;
  auto [seed, spans] = build_seed_message(*op, in);
  s.conversation.push_back({llm::Role::User, std::move(seed)});
  s.spans = std::move(spans);

  RevisionNode root;
  root.id = "r0";
  root.prompt = refinable_prompt(*op);
  root.origin = RevisionOrigin::Original;
  root.created_at = now_ms();
  s.tree.push_back(root);
  s.active_node = root.id;
  s.last_discussed = root.id;

  auto reply = ask(s, s.conversation);
  auto tagged = extract_tagged(reply);
  if (!tagged.prompt && !tagged.schema) throw TagParseError("prompt", "reply contains no suggestion");
  s.conversation.push_back({llm::Role::Assistant, reply});

  RevisionNode child;
  child.id = next_node_id(s);
  child.parent = root.id;
  child.prompt = tagged.prompt.value_or(root.prompt);
  child.schema_change = tagged.schema;
  child.origin = RevisionOrigin::AiSuggested;
  child.created_at = now_ms();
  s.tree.push_back(child);
  s.active_node = child.id;
  s.last_discussed = child.id;
  return s;
}

const RevisionNode& Refiner::refine(RefinementSession& s, const std::string& feedback) {
  const auto& parent = s.active();
  auto convo = s.conversation;
  std::string msg;
  if (parent.id != s.last_discussed) msg += "The current prompt is now:\n<current>\n" + parent.prompt + "\n</current>\n\n";
  msg += feedback;
  convo.push_back({llm::Role::User, msg});

  auto reply = ask(s, convo);
  auto tagged = extract_tagged(reply);
  if (!tagged.prompt && !tagged.schema) throw TagParseError("prompt", "reply contains no suggestion");
  convo.push_back({llm::Role::Assistant, reply});

  RevisionNode child;
  child.id = next_node_id(s);
  child.parent = parent.id;
  child.prompt = tagged.prompt.value_or(parent.prompt);
  child.schema_change = tagged.schema;
  child.origin = RevisionOrigin::UserFeedback;
  child.created_at = now_ms();

  s.conversation = std::move(convo);
  s.tree.push_back(std::move(child));
  s.active_node = s.tree.back().id;
  s.last_discussed = s.active_node;
  return s.tree.back();
}

const RevisionNode& apply_manual_edit(RefinementSession& s, const std::string& edited_prompt,
                                      std::optional<OutputSchema> schema) {
  const auto& parent = s.active();
  s.conversation.push_back({llm::Role::User, "I changed the prompt from:\n<before>\n" + parent.prompt +
                                                 "\n</before>\nto:\n<after>\n" + edited_prompt + "\n</after>"});
  RevisionNode child;
  child.id = next_node_id(s);
  child.parent = parent.id;
  child.prompt = edited_prompt;
  child.schema_change = std::move(schema);
  child.origin = RevisionOrigin::ManualEdit;
  child.created_at = now_ms();
  s.tree.push_back(std::move(child));
  s.active_node = s.tree.back().id;
  s.last_discussed = s.active_node;
  return s.tree.back();
}

void checkout(RefinementSession& s, const std::string& node_id) {
  s.node(node_id);
  s.active_node = node_id;
}

PipelineSpec accept_revision(const PipelineSpec& pipeline, const RefinementSession& s, const std::string& node_id) {
  const auto& n = s.node(node_id);
  PipelineSpec out = pipeline;
  auto* op = out.find(s.operation_id);
  if (op == nullptr) throw ValidationError("operation no longer in pipeline: " + s.operation_id);
  if (op->kind == OpKind::Resolve && op->resolve) op->resolve->compare_prompt = n.prompt;
  else op->prompt = n.prompt;
  if (n.schema_change) op->output_schema = *n.schema_change;
  return out;
}

std::vector<DiffLine> line_diff(std::string_view a, std::string_view b) {
  auto la = text::split_lines(a);
  auto lb = text::split_lines(b);
  const std::size_t n = la.size(), m = lb.size();
  std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = la[i] == lb[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  std::vector<DiffLine> out;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (la[i] == lb[j]) {
      out.push_back({' ', std::string(la[i])});
      ++i, ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      out.push_back({'-', std::string(la[i++])});
    } else {
      out.push_back({'+', std::string(lb[j++])});
    }
  }
  while (i < n) out.push_back({'-', std::string(la[i++])});
  while (j < m) out.push_back({'+', std::string(lb[j++])});
  return out;
}

Value to_json(const std::vector<DiffLine>& diff) {
  Value out = Value::array();
  for (const auto& d : diff) out.push_back({{"op", std::string(1, d.op)}, {"text", d.text}});
  return out;
}

}  // namespace semforge
