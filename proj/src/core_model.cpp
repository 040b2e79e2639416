#include "semforge/core_model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "semforge/errors.hpp"
#include "semforge/hash.hpp"
#include "semforge/text.hpp"

namespace semforge {

Value document_to_json(const Document& d) {
  Value v = Value::object();
  v["id"] = d.id;
  v["attrs"] = d.attrs;
  return v;
}

Document document_from_json(const Value& v) {
  Document d;
  d.id = v.at("id").get<std::string>();
  d.attrs = v.at("attrs");
  return d;
}

std::vector<std::string> Dataset::attribute_names() const {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& d : docs)
    for (auto it = d.attrs.begin(); it != d.attrs.end(); ++it)
      if (seen.insert(it.key()).second) names.push_back(it.key());
  return names;
}

std::string_view to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::Numerical: return "numerical";
    case AttributeKind::Boolean: return "boolean";
    case AttributeKind::CategoricalString: return "categorical_string";
    case AttributeKind::FreeTextMultiWord: return "free_text_multi_word";
    case AttributeKind::FreeTextSingleWord: return "free_text_single_word";
    case AttributeKind::ListOfValues: return "list_of_values";
    case AttributeKind::Other: return "other";
  }
  return "other";
}

std::string derive_document_id(std::string_view content_bytes, std::size_t ordinal) {
  return sha256_hex(content_bytes).substr(0, 16) + "-" + std::to_string(ordinal);
}

Document wrap_unstructured(std::string text, std::string key, std::string id) {
  Document d;
  d.id = id.empty() ? derive_document_id(text, 0) : std::move(id);
  d.attrs[key] = std::move(text);
  return d;
}

AttributeKind infer_attribute_kind(const std::vector<Value>& values) {
  std::vector<const Value*> present;
  for (const auto& v : values)
    if (!v.is_null()) present.push_back(&v);
  if (present.empty()) return AttributeKind::Other;

  auto all = [&](auto pred) { return std::all_of(present.begin(), present.end(), pred); };
  if (all([](const Value* v) { return v->is_number(); })) return AttributeKind::Numerical;
  if (all([](const Value* v) { return v->is_boolean(); })) return AttributeKind::Boolean;
  if (all([](const Value* v) { return v->is_array(); })) return AttributeKind::ListOfValues;
  if (!all([](const Value* v) { return v->is_string(); })) return AttributeKind::Other;

  std::set<std::string_view> distinct;
  bool multi_word = false;
  for (const auto* v : present) {
    const auto& s = v->get_ref<const std::string&>();
    distinct.insert(s);
    if (!multi_word && text::word_count(s) > 1) multi_word = true;
  }
  // Strict: a ratio of exactly 0.5 is not categorical.
  if (distinct.size() * 2 < present.size()) return AttributeKind::CategoricalString;
  return multi_word ? AttributeKind::FreeTextMultiWord : AttributeKind::FreeTextSingleWord;
}

DatasetStats dataset_stats(const Dataset& d) {
  DatasetStats s;
  s.doc_count = d.docs.size();
  s.attributes = d.attribute_names();
  for (const auto& name : s.attributes) {
    WordCountDistribution dist;
    for (const auto& doc : d.docs) {
      auto it = doc.attrs.find(name);
      if (it == doc.attrs.end() || !it->is_string()) continue;
      dist.counts.push_back(text::word_count(it->get_ref<const std::string&>()));
    }
    if (dist.counts.empty()) continue;
    auto [lo, hi] = std::minmax_element(dist.counts.begin(), dist.counts.end());
    dist.min = *lo;
    dist.max = *hi;
    double total = 0;
    for (auto c : dist.counts) total += static_cast<double>(c);
    dist.mean = total / static_cast<double>(dist.counts.size());
    s.word_counts.emplace(name, std::move(dist));
  }
  return s;
}

Value stats_to_json(const DatasetStats& s) {
  Value v = Value::object();
  v["doc_count"] = s.doc_count;
  v["attributes"] = s.attributes;
  Value wc = Value::object();
  for (const auto& name : s.attributes) {
    auto it = s.word_counts.find(name);
    if (it == s.word_counts.end()) continue;
    wc[name] = {{"counts", it->second.counts},
                {"min", it->second.min},
                {"max", it->second.max},
                {"mean", it->second.mean}};
  }
  v["word_counts"] = wc;
  return v;
}

std::vector<Value> column_values(const std::vector<Document>& docs, std::string_view attribute) {
  std::vector<Value> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto it = d.attrs.find(attribute);
    out.push_back(it == d.attrs.end() ? Value() : *it);
  }
  return out;
}

std::string dataset_fingerprint(const std::vector<Document>& docs) {
  Hasher h;
  h.field(static_cast<std::uint64_t>(docs.size()));
  for (const auto& d : docs) {
    h.field(d.id);
    h.field(sha256_hex(canonical_dump(d.attrs)));
  }
  return to_hex(h.finish());
}

namespace {

Document object_to_document(Value obj, std::size_t ordinal, int line) {
  if (!obj.is_object()) throw DatasetError("record is not a JSON object", line);
  Document d;
  auto it = obj.find("id");
  if (it != obj.end() && (it->is_string() || it->is_number_integer())) {
    d.id = it->is_string() ? it->get<std::string>() : it->dump();
  } else {
    d.id = derive_document_id(canonical_dump(obj), ordinal);
  }
  d.attrs = std::move(obj);
  return d;
}

void check_unique_ids(const Dataset& ds) {
  std::set<std::string_view> ids;
  for (const auto& d : ds.docs)
    if (!ids.insert(d.id).second) throw DatasetError("duplicate document id '" + d.id + "'");
}

}  // namespace

Dataset parse_dataset(std::string_view payload, DatasetFormat format, std::string source_name) {
  Dataset ds;
  ds.source_name = std::move(source_name);
  switch (format) {
    case DatasetFormat::JsonArray: {
      Value arr;
      try {
        arr = Value::parse(payload);
      } catch (const nlohmann::json::parse_error& e) {
        throw DatasetError(std::string("malformed JSON: ") + e.what());
      }
      if (!arr.is_array()) throw DatasetError("expected a JSON array of objects");
      std::size_t i = 0;
      for (auto& obj : arr) {
        try {
          ds.docs.push_back(object_to_document(std::move(obj), i, 0));
        } catch (const DatasetError& e) {
          throw DatasetError("element " + std::to_string(i) + ": " + e.what());
        }
        ++i;
      }
      break;
    }
    case DatasetFormat::JsonLines: {
      int line_no = 0;
      std::size_t ordinal = 0;
      for (const auto& line : text::split_lines(payload)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        Value obj;
        try {
          obj = Value::parse(line);
        } catch (const nlohmann::json::parse_error&) {
          throw DatasetError("malformed JSON", line_no);
        }
        ds.docs.push_back(object_to_document(std::move(obj), ordinal++, line_no));
      }
      break;
    }
    case DatasetFormat::PlainText:
      ds.docs.push_back(wrap_unstructured(std::string(payload), "content",
                                          derive_document_id(payload, 0)));
      break;
  }
  check_unique_ids(ds);
  ds.id = dataset_fingerprint(ds.docs).substr(0, 16);
  return ds;
}

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DatasetError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Dataset ds;
    ds.source_name = path.filename().string();
    for (std::size_t i = 0; i < files.size(); ++i) {
      auto bytes = read_file(files[i]);
      auto id = derive_document_id(bytes, i);
      ds.docs.push_back(wrap_unstructured(std::move(bytes), "content", std::move(id)));
    }
    ds.id = dataset_fingerprint(ds.docs).substr(0, 16);
    return ds;
  }
  auto bytes = read_file(path);
  auto ext = path.extension().string();
  auto fmt = ext == ".jsonl" ? DatasetFormat::JsonLines
             : ext == ".json" ? DatasetFormat::JsonArray
                              : DatasetFormat::PlainText;
  return parse_dataset(bytes, fmt, path.filename().string());
}

}  // namespace semforge
