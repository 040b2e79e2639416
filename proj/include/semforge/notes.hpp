#pragma once

// In-situ notes. Persisted as one JSON object per line; updates and deletes
// append a record with the same id ("deleted": true for removals), and the
// last record for an id wins on load.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "semforge/value.hpp"

namespace semforge {

enum class NoteTag { Red, Green, Yellow, Blue };
std::string_view to_string(NoteTag t);
std::optional<NoteTag> note_tag_from_string(std::string_view s);

struct Note {
  std::string id;
  std::string operation_id;
  std::string attribute;
  std::string comment;
  std::optional<NoteTag> tag;
  std::optional<std::string> row_ref;
  std::int64_t created_at = 0;  // unix milliseconds
  std::uint64_t sequence = 0;   // insertion order, breaks timestamp ties
  bool orphaned = false;        // operation no longer in the pipeline; computed on query
};

Value to_json(const Note& n);
Note note_from_json(const Value& v);

struct NoteFilter {
  std::optional<std::string> operation_id;
  std::optional<std::string> attribute;
  std::optional<NoteTag> tag;
  std::optional<std::string> text_query;
};

class NoteStore {
 public:
  /// In-memory only when `path` is empty.
  explicit NoteStore(std::filesystem::path path = {});

  /// Assigns id, timestamp, and sequence. Throws ValidationError on an empty comment.
  Note add(Note n);
  std::optional<Note> get(const std::string& id) const;
  /// Replaces comment/tag/attribute/row_ref of an existing note.
  std::optional<Note> update(const std::string& id, const Value& patch);
  bool remove(const std::string& id);

  /// Conjunctive filter, newest first. Notes whose operation is absent from
  /// `live_ops` (when given) come back flagged orphaned.
  std::vector<Note> query(const NoteFilter& f, const std::set<std::string>* live_ops = nullptr) const;

 private:
  void append(const Value& record) const;

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<Note> notes_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace semforge
