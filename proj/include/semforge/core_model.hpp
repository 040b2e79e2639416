#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "semforge/value.hpp"

namespace semforge {

struct Document {
  std::string id;
  Value attrs = Value::object();

  bool has(std::string_view name) const { return attrs.contains(name); }
  bool operator==(const Document&) const = default;
};

Value document_to_json(const Document& d);
Document document_from_json(const Value& v);

struct Dataset {
  std::string id;
  std::vector<Document> docs;
  std::string source_name;

  /// Union of attribute names in first-appearance order.
  std::vector<std::string> attribute_names() const;
};

enum class AttributeKind {
  Numerical,
  Boolean,
  CategoricalString,
  FreeTextMultiWord,
  FreeTextSingleWord,
  ListOfValues,
  Other,
};

std::string_view to_string(AttributeKind kind);

/// Derived id for documents that arrive without one: first 16 hex chars of
/// sha256(content) + "-" + ordinal.
std::string derive_document_id(std::string_view content_bytes, std::size_t ordinal);

Document wrap_unstructured(std::string text, std::string key = "content", std::string id = {});

/// Nulls in `values` are ignored.
AttributeKind infer_attribute_kind(const std::vector<Value>& values);

struct WordCountDistribution {
  std::vector<std::size_t> counts;  // one per non-null string value, document order
  std::size_t min = 0;
  std::size_t max = 0;
  double mean = 0.0;
};

struct DatasetStats {
  std::size_t doc_count = 0;
  std::vector<std::string> attributes;
  std::map<std::string, WordCountDistribution> word_counts;  // string-valued attributes only
};

DatasetStats dataset_stats(const Dataset& d);
Value stats_to_json(const DatasetStats& s);

/// Column of values for `attribute` across docs; missing attributes become null.
std::vector<Value> column_values(const std::vector<Document>& docs, std::string_view attribute);

/// Hash of ordered document ids and per-document content hashes.
std::string dataset_fingerprint(const std::vector<Document>& docs);

enum class DatasetFormat { JsonArray, JsonLines, PlainText };

/// Parses an in-memory payload. Throws DatasetError (with a 1-based line for JSONL).
Dataset parse_dataset(std::string_view payload, DatasetFormat format, std::string source_name);

/// Loads .json / .jsonl files, a directory of text files (sorted by file name,
/// one document each), or any other file as a single text document.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace semforge
