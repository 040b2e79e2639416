#include "semforge/cache.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "semforge/errors.hpp"

namespace fs = std::filesystem;

namespace semforge {

namespace {

constexpr const char* kRowsFile = "rows.gz";
constexpr const char* kIndexFile = "index";

void write_gz(const fs::path& path, const std::string& data) {
  gzFile f = gzopen(path.string().c_str(), "wb");
  if (f == nullptr) throw Error("cache: cannot write " + path.string());
  std::size_t off = 0;
  while (off < data.size()) {
    auto chunk = static_cast<unsigned>(std::min<std::size_t>(data.size() - off, 1u << 20));
    if (gzwrite(f, data.data() + off, chunk) != static_cast<int>(chunk)) {
      gzclose(f);
      throw Error("cache: short write " + path.string());
    }
    off += chunk;
  }
  if (gzclose(f) != Z_OK) throw Error("cache: cannot close " + path.string());
}

std::optional<std::string> read_gz(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) return std::nullopt;
  std::string out;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  bool ok = n == 0;
  gzclose(f);
  if (!ok) return std::nullopt;
  return out;
}

}  // namespace

OutputCache::OutputCache(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  load_index();
}

fs::path OutputCache::default_dir() {
  if (const char* env = std::getenv("SEMFORGE_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return fs::current_path() / ".semforge-cache";
}

void OutputCache::load_index() {
  std::ifstream in(dir_ / kIndexFile);
  if (!in) return;
  Value idx;
  try {
    idx = Value::parse(in);
  } catch (const nlohmann::json::exception&) {
    return;
  }
  clock_ = idx.value("clock", std::uint64_t{0});
  const Value entries = idx.value("entries", Value::object());
  for (const auto& [key, e] : entries.items()) {
    if (!fs::exists(dir_ / key / kRowsFile)) continue;
    entries_[key] = Entry{e.value("bytes", std::uint64_t{0}), e.value("last_access", std::uint64_t{0})};
  }
}

void OutputCache::save_index() const {
  Value idx = Value::object();
  idx["clock"] = clock_;
  Value entries = Value::object();
  for (const auto& [key, e] : entries_) entries[key] = {{"bytes", e.bytes}, {"last_access", e.last_access}};
  idx["entries"] = std::move(entries);
  auto tmp = dir_ / (std::string(kIndexFile) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << idx.dump();
  }
  fs::rename(tmp, dir_ / kIndexFile);
}

std::optional<std::vector<Document>> OutputCache::get(const std::string& key) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  auto data = read_gz(dir_ / key / kRowsFile);
  if (!data) {
    erase_locked(key);
    save_index();
    return std::nullopt;
  }
  std::vector<Document> rows;
  std::istringstream lines(*data);
  std::string line;
  try {
    while (std::getline(lines, line)) {
      if (!line.empty()) rows.push_back(document_from_json(Value::parse(line)));
    }
  } catch (const std::exception&) {
    erase_locked(key);
    save_index();
    return std::nullopt;
  }
  it->second.last_access = ++clock_;
  save_index();
  return rows;
}

void OutputCache::put(const std::string& key, const std::vector<Document>& rows) {
  std::string data;
  for (const auto& d : rows) {
    data += document_to_json(d).dump();
    data += '\n';
  }
  std::lock_guard lock(mu_);
  auto entry_dir = dir_ / key;
  fs::create_directories(entry_dir);
  auto tmp = entry_dir / (std::string(kRowsFile) + ".tmp");
  write_gz(tmp, data);
  fs::rename(tmp, entry_dir / kRowsFile);
  entries_[key] = Entry{static_cast<std::uint64_t>(fs::file_size(entry_dir / kRowsFile)), ++clock_};
  save_index();
}

bool OutputCache::contains(const std::string& key) const {
  std::lock_guard lock(mu_);
  return entries_.contains(key);
}

void OutputCache::pin(const std::string& key) {
  std::lock_guard lock(mu_);
  ++pins_[key];
}

void OutputCache::unpin(const std::string& key) {
  std::lock_guard lock(mu_);
  auto it = pins_.find(key);
  if (it != pins_.end() && --it->second <= 0) pins_.erase(it);
}

void OutputCache::erase_locked(const std::string& key) {
  std::error_code ec;
  fs::remove_all(dir_ / key, ec);
  entries_.erase(key);
}

std::size_t OutputCache::gc(std::uint64_t max_bytes) {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::uint64_t, std::string>> order;
  std::uint64_t total = 0;
  for (const auto& [key, e] : entries_) {
    total += e.bytes;
    order.emplace_back(e.last_access, key);
  }
  std::sort(order.begin(), order.end());
  std::size_t evicted = 0;
  for (const auto& [access, key] : order) {
    if (total <= max_bytes) break;
    if (pins_.contains(key)) continue;
    total -= entries_[key].bytes;
    erase_locked(key);
    ++evicted;
  }
  if (evicted > 0) save_index();
  return evicted;
}

std::uint64_t OutputCache::total_bytes() const {
  std::lock_guard lock(mu_);
  std::uint64_t total = 0;
  for (const auto& [key, e] : entries_) total += e.bytes;
  return total;
}

std::size_t OutputCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<std::string> OutputCache::keys_by_recency() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::uint64_t, std::string>> order;
  for (const auto& [key, e] : entries_) order.emplace_back(e.last_access, key);
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  for (auto& [a, k] : order) out.push_back(std::move(k));
  return out;
}

}  // namespace semforge
