#include <map>
#include <set>

#include "semforge/errors.hpp"
#include "semforge/operators.hpp"
#include "semforge/parallel.hpp"
#include "semforge/template_engine.hpp"
#include "semforge/text.hpp"
#include "semforge/union_find.hpp"

namespace semforge::ops {

namespace {

const OutputSchema& match_schema() {
  static const OutputSchema s{{{"is_match", SchemaType::of(ScalarKind::Boolean)}}};
  return s;
}

}  // namespace

std::vector<Document> run_resolve(const OperationSpec& op, const std::vector<Document>& docs, OpContext& ctx,
                                  ResolveStats* stats) {
  const auto& cfg = *op.resolve;
  const auto& target = cfg.target_attribute;
  auto compare_tpl = tmpl::Template::parse(cfg.compare_prompt);
  auto resolution_tpl = tmpl::Template::parse(cfg.resolution_prompt);
  const OutputSchema canonical_schema{{{target, SchemaType::of(ScalarKind::String)}}};

  // Distinct string values in first-appearance order (list targets element-wise).
  std::vector<std::string> values;
  std::map<std::string, std::size_t> index;
  auto note = [&](const Value& v) {
    if (!v.is_string()) return;
    auto [it, inserted] = index.emplace(v.get<std::string>(), values.size());
    if (inserted) values.push_back(it->first);
  };
  for (const auto& d : docs) {
    auto it = d.attrs.find(target);
    if (it == d.attrs.end()) continue;
    if (it->is_array()) {
      for (const auto& e : *it) note(e);
    } else {
      note(*it);
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = i + 1; j < values.size(); ++j)
      if (text::jaccard(values[i], values[j]) >= cfg.blocking_threshold) pairs.emplace_back(i, j);
  if (pairs.size() > kMaxResolveComparisons)
    throw OperatorError("resolve '" + op.name + "' would need " + std::to_string(pairs.size()) +
                        " comparisons (limit " + std::to_string(kMaxResolveComparisons) +
                        "); raise blocking_threshold");

  auto as_doc = [&](const std::string& v) {
    Value o = Value::object();
    o[target] = v;
    return o;
  };

  ctx.begin(pairs.size());
  std::vector<char> matched(pairs.size(), 0);
  parallel_for(pairs.size(), ctx.max_parallel(), [&](std::size_t p) {
    auto [i, j] = pairs[p];
    try {
      Value b = Value::object();
      b["input1"] = as_doc(values[i]);
      b["input2"] = as_doc(values[j]);
      auto result = ctx.gateway().complete_structured({{llm::Role::User, compare_tpl.render(b)}}, match_schema(),
                                                      ctx.profile());
      matched[p] = result.at("is_match").get<bool>() ? 1 : 0;
    } catch (const Error& e) {
      ctx.record_error(values[i] + " <> " + values[j], e.what());
    }
    ctx.step();
  });

  UnionFind uf(values.size());
  for (std::size_t p = 0; p < pairs.size(); ++p)
    if (matched[p]) uf.unite(pairs[p].first, pairs[p].second);
  auto clusters = uf.clusters();

  std::vector<std::vector<std::size_t>> multi;
  for (auto& c : clusters)
    if (c.size() >= 2) multi.push_back(c);

  std::map<std::string, std::string> canonical;
  std::set<std::string> failed;
  std::mutex mu;
  parallel_for(multi.size(), ctx.max_parallel(), [&](std::size_t c) {
    Value inputs = Value::array();
    for (auto m : multi[c]) inputs.push_back(as_doc(values[m]));
    try {
      Value b = Value::object();
      b["inputs"] = inputs;
      auto result = ctx.gateway().complete_structured({{llm::Role::User, resolution_tpl.render(b)}},
                                                      canonical_schema, ctx.profile());
      auto value = result.at(target).get<std::string>();
      std::lock_guard lock(mu);
      for (auto m : multi[c]) canonical[values[m]] = value;
    } catch (const Error& e) {
      std::lock_guard lock(mu);
      for (auto m : multi[c]) failed.insert(values[m]);
      ctx.record_error("cluster:" + values[multi[c].front()], e.what());
    }
  });

  if (stats) *stats = {values.size(), pairs.size(), clusters.size(), multi.size()};

  auto rewrite = [&](const Value& v, bool& touched_failed) -> Value {
    if (!v.is_string()) return v;
    const auto& s = v.get_ref<const std::string&>();
    if (failed.count(s)) touched_failed = true;
    auto it = canonical.find(s);
    return it == canonical.end() ? v : Value(it->second);
  };

  std::vector<Document> out = docs;
  for (auto& d : out) {
    auto it = d.attrs.find(target);
    if (it == d.attrs.end()) continue;
    bool touched_failed = false;
    if (it->is_array()) {
      for (auto& e : *it) e = rewrite(e, touched_failed);
    } else {
      *it = rewrite(*it, touched_failed);
    }
    if (touched_failed) d.attrs[error_marker(op)] = "resolution failed for a cluster containing this value";
  }
  return out;
}

}  // namespace semforge::ops
