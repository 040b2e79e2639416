#include "semforge/notes.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "semforge/errors.hpp"
#include "semforge/hash.hpp"
#include "semforge/text.hpp"

namespace semforge {

std::string_view to_string(NoteTag t) {
  switch (t) {
    case NoteTag::Red: return "red";
    case NoteTag::Green: return "green";
    case NoteTag::Yellow: return "yellow";
    case NoteTag::Blue: return "blue";
  }
  return "red";
}

std::optional<NoteTag> note_tag_from_string(std::string_view s) {
  auto lower = text::to_lower(s);
  if (lower == "red") return NoteTag::Red;
  if (lower == "green") return NoteTag::Green;
  if (lower == "yellow") return NoteTag::Yellow;
  if (lower == "blue") return NoteTag::Blue;
  return std::nullopt;
}

Value to_json(const Note& n) {
  Value v = Value::object();
  v["id"] = n.id;
  v["operation_id"] = n.operation_id;
  v["attribute"] = n.attribute;
  v["comment"] = n.comment;
  v["tag"] = n.tag ? Value(std::string(to_string(*n.tag))) : Value();
  v["row_ref"] = n.row_ref ? Value(*n.row_ref) : Value();
  v["created_at"] = n.created_at;
  v["sequence"] = n.sequence;
  v["orphaned"] = n.orphaned;
  return v;
}

Note note_from_json(const Value& v) {
  if (!v.is_object()) throw ValidationError("note must be a JSON object");
  Note n;
  n.id = v.value("id", std::string{});
  n.operation_id = v.value("operation_id", std::string{});
  n.attribute = v.value("attribute", std::string{});
  n.comment = v.value("comment", std::string{});
  if (auto it = v.find("tag"); it != v.end() && !it->is_null()) {
    if (!it->is_string()) throw ValidationError("tag must be a string");
    n.tag = note_tag_from_string(it->get<std::string>());
    if (!n.tag) throw ValidationError("unknown tag: " + it->get<std::string>());
  }
  if (auto it = v.find("row_ref"); it != v.end() && !it->is_null()) n.row_ref = stringify(*it);
  n.created_at = v.value("created_at", std::int64_t{0});
  n.sequence = v.value("sequence", std::uint64_t{0});
  return n;
}

NoteStore::NoteStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    Value rec;
    try {
      rec = Value::parse(line);
    } catch (const nlohmann::json::exception&) {
      continue;  // torn trailing write
    }
    auto id = rec.value("id", std::string{});
    auto it = std::find_if(notes_.begin(), notes_.end(), [&](const Note& n) { return n.id == id; });
    if (rec.value("deleted", false)) {
      if (it != notes_.end()) notes_.erase(it);
      continue;
    }
    Note n = note_from_json(rec);
    next_seq_ = std::max(next_seq_, n.sequence + 1);
    if (it != notes_.end()) *it = n;
    else notes_.push_back(n);
  }
}

void NoteStore::append(const Value& record) const {
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << record.dump() << '\n';
  out.flush();
}

Note NoteStore::add(Note n) {
  if (text::trim(n.comment).empty()) throw ValidationError("note comment must be nonempty");
  std::lock_guard lock(mu_);
  n.created_at = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::system_clock::now().time_since_epoch())
                     .count();
  n.sequence = next_seq_++;
  Hasher h;
  h.field(n.operation_id).field(n.attribute).field(n.comment).field(static_cast<std::uint64_t>(n.created_at));
  h.field(n.sequence);
  n.id = "note-" + to_hex(h.finish()).substr(0, 12);
  n.orphaned = false;
  notes_.push_back(n);
  append(to_json(n));
  return n;
}

std::optional<Note> NoteStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  for (const auto& n : notes_) {
    if (n.id == id) return n;
  }
  return std::nullopt;
}

std::optional<Note> NoteStore::update(const std::string& id, const Value& patch) {
  std::lock_guard lock(mu_);
  auto it = std::find_if(notes_.begin(), notes_.end(), [&](const Note& n) { return n.id == id; });
  if (it == notes_.end()) return std::nullopt;
  Note n = *it;
  if (patch.contains("comment")) {
    n.comment = patch["comment"].get<std::string>();
    if (text::trim(n.comment).empty()) throw ValidationError("note comment must be nonempty");
  }
  if (patch.contains("attribute")) n.attribute = patch["attribute"].get<std::string>();
  if (patch.contains("tag")) {
    if (patch["tag"].is_null()) {
      n.tag.reset();
    } else {
      n.tag = note_tag_from_string(patch["tag"].get<std::string>());
      if (!n.tag) throw ValidationError("unknown tag");
    }
  }
  if (patch.contains("row_ref")) {
    if (patch["row_ref"].is_null()) n.row_ref.reset();
    else n.row_ref = stringify(patch["row_ref"]);
  }
  *it = n;
  append(to_json(n));
  return n;
}

bool NoteStore::remove(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = std::find_if(notes_.begin(), notes_.end(), [&](const Note& n) { return n.id == id; });
  if (it == notes_.end()) return false;
  notes_.erase(it);
  append(Value{{"id", id}, {"deleted", true}});
  return true;
}

std::vector<Note> NoteStore::query(const NoteFilter& f, const std::set<std::string>* live_ops) const {
  std::vector<Note> out;
  {
    std::lock_guard lock(mu_);
    for (const auto& n : notes_) {
      if (f.operation_id && n.operation_id != *f.operation_id) continue;
      if (f.attribute && n.attribute != *f.attribute) continue;
      if (f.tag && n.tag != f.tag) continue;
      if (f.text_query && !text::icontains(n.comment, *f.text_query)) continue;
      out.push_back(n);
    }
  }
  for (auto& n : out) n.orphaned = live_ops != nullptr && !live_ops->contains(n.operation_id);
  std::sort(out.begin(), out.end(), [](const Note& a, const Note& b) {
    if (a.created_at != b.created_at) return a.created_at > b.created_at;
    return a.sequence > b.sequence;
  });
  return out;
}

}  // namespace semforge
