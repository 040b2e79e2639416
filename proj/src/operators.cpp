#include "semforge/operators.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "semforge/errors.hpp"
#include "semforge/expr.hpp"
#include "semforge/parallel.hpp"
#include "semforge/template_engine.hpp"
#include "semforge/text.hpp"

namespace semforge::ops {

void OpContext::begin(std::size_t total) {
  std::lock_guard lock(mu_);
  done_ = 0;
  total_ = total;
}

void OpContext::step() {
  std::lock_guard lock(mu_);
  ++done_;
  if (progress_) progress_(done_, total_);
}

void OpContext::record_error(std::string doc_id, std::string message) {
  std::lock_guard lock(mu_);
  errors_.push_back({std::move(doc_id), std::move(message)});
}

std::vector<OpError> OpContext::errors() const {
  std::lock_guard lock(mu_);
  return errors_;
}

std::string error_marker(const OperationSpec& op) { return "_error." + op.name; }

namespace {

Value document_bindings(const Document& doc) {
  Value b = Value::object();
  b["input"] = doc.attrs;
  return b;
}

std::vector<llm::ChatMessage> user_prompt(std::string text) { return {{llm::Role::User, std::move(text)}}; }

void merge_into(Value& attrs, const Value& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) attrs[it.key()] = it.value();
}

void mark_error(Document& doc, const OperationSpec& op, const std::string& message) {
  doc.attrs[error_marker(op)] = message;
}

}  // namespace

std::string render_document_prompt(const OperationSpec& op, const Document& doc) {
  return tmpl::Template::parse(op.prompt).render(document_bindings(doc));
}

// ---------------------------------------------------------------------------
// map / filter

std::vector<Document> run_map(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx) {
  auto tpl = tmpl::Template::parse(op.prompt);
  auto schema = op.effective_schema();
  std::vector<Document> out = docs;
  ctx.begin(docs.size());
  parallel_for(docs.size(), ctx.max_parallel(), [&](std::size_t i) {
    auto& doc = out[i];
    try {
      auto prompt = tpl.render(document_bindings(doc));
      auto result = ctx.gateway().complete_structured(user_prompt(std::move(prompt)), schema, ctx.profile());
      merge_into(doc.attrs, result);
    } catch (const Error& e) {
      mark_error(doc, op, e.what());
      ctx.record_error(doc.id, e.what());
    }
    ctx.step();
  });
  return out;
}

std::vector<Document> run_filter(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx) {
  auto tpl = tmpl::Template::parse(op.prompt);
  auto schema = op.effective_schema();
  const auto decision = schema.attributes.front().first;
  std::vector<char> keep(docs.size(), 1);
  std::vector<Document> marked = docs;
  ctx.begin(docs.size());
  parallel_for(docs.size(), ctx.max_parallel(), [&](std::size_t i) {
    try {
      auto prompt = tpl.render(document_bindings(docs[i]));
      auto result = ctx.gateway().complete_structured(user_prompt(std::move(prompt)), schema, ctx.profile());
      keep[i] = result.at(decision).get<bool>() ? 1 : 0;
    } catch (const Error& e) {
      // Fail open: an errored document is kept and marked.
      mark_error(marked[i], op, e.what());
      ctx.record_error(docs[i].id, e.what());
    }
    ctx.step();
  });
  std::vector<Document> out;
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (keep[i]) out.push_back(std::move(marked[i]));
  return out;
}

// ---------------------------------------------------------------------------
// reduce

std::vector<std::pair<Value, std::vector<std::size_t>>> group_documents(const std::vector<Document>& docs,
                                                                        const std::string& key) {
  std::vector<std::pair<Value, std::vector<std::size_t>>> groups;
  std::map<std::string, std::size_t> slot;
  auto add = [&](const Value& k, std::size_t doc) {
    auto canon = canonical_dump(k);
    auto [it, inserted] = slot.emplace(canon, groups.size());
    if (inserted) groups.emplace_back(k, std::vector<std::size_t>{});
    auto& members = groups[it->second].second;
    if (members.empty() || members.back() != doc) members.push_back(doc);
  };
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto it = docs[i].attrs.find(key);
    if (it == docs[i].attrs.end() || it->is_null()) {
      add(Value(), i);
    } else if (it->is_array()) {
      if (it->empty()) add(Value(), i);
      for (const auto& element : *it) add(element, i);
    } else {
      add(*it, i);
    }
  }
  return groups;
}

std::string group_document_id(const Value& key) {
  if (key.is_string()) return key.get<std::string>();
  return "key:" + canonical_dump(key);
}

namespace {

bool references_root(const tmpl::Template& t, std::string_view root) {
  for (const auto& r : t.references())
    if (r.root == root) return true;
  return false;
}

}  // namespace

std::vector<Document> run_reduce(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx) {
  auto tpl = tmpl::Template::parse(op.prompt);
  auto schema = op.effective_schema();
  const auto& key_name = *op.reduce_key;
  const bool uses_accumulated = references_root(tpl, "accumulated");
  const auto instruction_tokens = llm::count_tokens(llm::schema_instruction(schema), ctx.profile());
  const auto limit = ctx.profile().context_limit_tokens;

  auto groups = group_documents(docs, key_name);
  std::vector<Document> out(groups.size());
  ctx.begin(groups.size());

  parallel_for(groups.size(), ctx.max_parallel(), [&](std::size_t g) {
    const auto& [key, members] = groups[g];
    Document result;
    result.id = group_document_id(key);
    result.attrs[key_name] = key;

    auto render_batch = [&](std::size_t begin, std::size_t end, const Value& accumulated) {
      Value inputs = Value::array();
      for (std::size_t m = begin; m < end; ++m) inputs.push_back(docs[members[m]].attrs);
      Value b = Value::object();
      b["inputs"] = inputs;
      b["reduce_key"] = key;
      b["accumulated"] = accumulated;
      auto prompt = tpl.render(b);
      if (!accumulated.is_null() && !uses_accumulated)
        prompt += "\n\nPartial result from earlier documents in this group:\n" + accumulated.dump();
      return prompt;
    };
    auto fits = [&](const std::string& prompt) {
      return llm::count_tokens(prompt, ctx.profile()) + instruction_tokens <= limit;
    };

    try {
      Value accumulated;
      std::size_t begin = 0;
      while (begin < members.size()) {
        // Largest prefix batch starting at `begin` whose prompt fits.
        if (!fits(render_batch(begin, begin + 1, accumulated)))
          throw OperatorError("document " + docs[members[begin]].id + " alone exceeds the context limit");
        std::size_t lo = begin + 1, hi = members.size();
        while (lo < hi) {
          auto mid = lo + (hi - lo + 1) / 2;
          if (fits(render_batch(begin, mid, accumulated))) lo = mid;
          else hi = mid - 1;
        }
        auto prompt = render_batch(begin, lo, accumulated);
        accumulated = ctx.gateway().complete_structured(user_prompt(std::move(prompt)), schema, ctx.profile());
        begin = lo;
      }
      if (!accumulated.is_null()) merge_into(result.attrs, accumulated);
    } catch (const Error& e) {
      mark_error(result, op, e.what());
      ctx.record_error(result.id, e.what());
    }
    out[g] = std::move(result);
    ctx.step();
  });
  return out;
}

// ---------------------------------------------------------------------------
// unnest / split / gather

std::vector<Document> run_unnest(const OperationSpec& op, const std::vector<Document>& docs) {
  const auto& attr = *op.unnest_attribute;
  std::vector<Document> out;
  for (const auto& doc : docs) {
    auto it = doc.attrs.find(attr);
    if (it == doc.attrs.end() || it->is_null()) continue;
    std::vector<Value> elements;
    if (it->is_array()) elements.assign(it->begin(), it->end());
    else elements.push_back(*it);
    for (std::size_t k = 0; k < elements.size(); ++k) {
      Document row;
      row.id = doc.id + "#" + std::to_string(k);
      row.attrs = doc.attrs;
      row.attrs[attr] = elements[k];
      out.push_back(std::move(row));
    }
  }
  return out;
}

namespace {

// Chunks of at most `budget` tokens, each broken just after the last
// whitespace at or before the budget (hard break when there is none).
std::vector<std::string> chunk_text(const std::string& s, std::int64_t budget, const llm::ModelProfile& profile) {
  std::vector<std::string> chunks;
  if (s.empty()) return {std::string()};
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto tokens_of = [&](std::size_t end) {
      return llm::count_tokens(std::string_view(s).substr(pos, end - pos), profile);
    };
    if (tokens_of(s.size()) <= budget) {
      chunks.push_back(s.substr(pos));
      break;
    }
    // Largest end with tokens <= budget: tokens(lo) fits, tokens(hi) does not.
    std::size_t lo = pos, hi = s.size();
    while (hi - lo > 1) {
      auto mid = lo + (hi - lo) / 2;
      if (tokens_of(mid) <= budget) lo = mid;
      else hi = mid;
    }
    std::size_t end = text::floor_boundary(s, lo);
    if (end <= pos) end = pos + text::utf8_seq_len(s, pos);
    std::size_t cut = end;
    for (std::size_t j = end; j > pos; --j) {
      if (std::isspace(static_cast<unsigned char>(s[j - 1]))) {
        cut = j;
        break;
      }
    }
    chunks.push_back(s.substr(pos, cut - pos));
    pos = cut;
  }
  return chunks;
}

}  // namespace

std::vector<Document> run_split(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx) {
  const auto& cfg = *op.split;
  std::vector<Document> out;
  ctx.begin(docs.size());
  for (const auto& doc : docs) {
    auto it = doc.attrs.find(cfg.attribute);
    if (it == doc.attrs.end() || !it->is_string()) {
      Document marked = doc;
      mark_error(marked, op, "attribute '" + cfg.attribute + "' is not a string");
      ctx.record_error(doc.id, "attribute '" + cfg.attribute + "' is not a string");
      out.push_back(std::move(marked));
      ctx.step();
      continue;
    }
    auto chunks = chunk_text(it->get<std::string>(), cfg.chunk_token_budget, ctx.profile());
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      Document c;
      c.id = doc.id + "#chunk" + std::to_string(k);
      c.attrs = doc.attrs;
      c.attrs[cfg.attribute] = std::move(chunks[k]);
      c.attrs["_chunk_index"] = k;
      c.attrs["_parent_id"] = doc.id;
      out.push_back(std::move(c));
    }
    ctx.step();
  }
  return out;
}

std::vector<std::vector<Document>> run_gather(const std::vector<Document>& chunks) {
  std::vector<std::vector<Document>> groups;
  std::map<std::string, std::size_t> slot;
  for (const auto& c : chunks) {
    auto it = c.attrs.find("_parent_id");
    auto parent = it != c.attrs.end() && it->is_string() ? it->get<std::string>() : c.id;
    auto [s, inserted] = slot.emplace(parent, groups.size());
    if (inserted) groups.emplace_back();
    groups[s->second].push_back(c);
  }
  for (auto& g : groups) {
    std::stable_sort(g.begin(), g.end(), [](const Document& a, const Document& b) {
      return a.attrs.value("_chunk_index", 0) < b.attrs.value("_chunk_index", 0);
    });
  }
  return groups;
}

// ---------------------------------------------------------------------------
// code operators

std::vector<Document> run_code_op(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx) {
  auto e = expr::Expression::parse(*op.code_expr);
  std::vector<Document> out;
  if (op.kind == OpKind::CodeReduce) {
    const auto& key_name = *op.reduce_key;
    auto groups = group_documents(docs, key_name);
    ctx.begin(groups.size());
    for (const auto& [key, members] : groups) {
      Document result;
      result.id = group_document_id(key);
      result.attrs[key_name] = key;
      Value inputs = Value::array();
      for (auto m : members) inputs.push_back(docs[m].attrs);
      try {
        auto v = e.evaluate(Value{{"inputs", inputs}, {"reduce_key", key}});
        if (!v.is_object()) throw expr::EvalError("code_reduce must produce a map");
        merge_into(result.attrs, v);
      } catch (const Error& err) {
        mark_error(result, op, err.what());
        ctx.record_error(result.id, err.what());
      }
      out.push_back(std::move(result));
      ctx.step();
    }
    return out;
  }

  ctx.begin(docs.size());
  for (const auto& doc : docs) {
    Document d = doc;
    try {
      auto v = e.evaluate(document_bindings(doc));
      if (op.kind == OpKind::CodeMap) {
        if (!v.is_object()) throw expr::EvalError("code_map must produce a map");
        merge_into(d.attrs, v);
      } else if (!expr::truthy(v)) {
        ctx.step();
        continue;
      }
    } catch (const Error& err) {
      mark_error(d, op, err.what());
      ctx.record_error(doc.id, err.what());
    }
    out.push_back(std::move(d));
    ctx.step();
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Document> run_operation(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx) {
  switch (op.kind) {
    case OpKind::Map: return run_map(op, docs, ctx);
    case OpKind::Filter: return run_filter(op, docs, ctx);
    case OpKind::Reduce: return run_reduce(op, docs, ctx);
    case OpKind::Resolve: return run_resolve(op, docs, ctx);
    case OpKind::Unnest: return run_unnest(op, docs);
    case OpKind::Split: return run_split(op, docs, ctx);
    case OpKind::Gather: {
      std::vector<Document> out;
      for (auto& g : run_gather(docs))
        for (auto& d : g) out.push_back(std::move(d));
      return out;
    }
    case OpKind::CodeMap:
    case OpKind::CodeFilter:
    case OpKind::CodeReduce:
      return run_code_op(op, docs, ctx);
  }
  return docs;
}

std::string format_selectivity(std::size_t in, std::size_t out) {
  std::string s = std::to_string(in) + " in → " + std::to_string(out) + " out, ";
  if (in == 0) return s + "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f×", static_cast<double>(out) / static_cast<double>(in));
  return s + buf;
}

}  // namespace semforge::ops
