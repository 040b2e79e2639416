#pragma once

// On-disk, content-addressed store of per-operation output tables.
//
//   <dir>/index                 JSON: logical clock + {digest-hex: {bytes, last_access}}
//   <dir>/<digest-hex>/rows.gz  gzip-compressed JSONL, one document per line

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "semforge/core_model.hpp"

namespace semforge {

class OutputCache {
 public:
  explicit OutputCache(std::filesystem::path dir);

  /// $SEMFORGE_CACHE_DIR, else ./.semforge-cache
  static std::filesystem::path default_dir();

  std::optional<std::vector<Document>> get(const std::string& key);
  void put(const std::string& key, const std::vector<Document>& rows);
  bool contains(const std::string& key) const;

  /// Pinned entries are never evicted (entries of running runs).
  void pin(const std::string& key);
  void unpin(const std::string& key);

  /// Evicts least-recently-used unpinned entries until total bytes <= max_bytes.
  std::size_t gc(std::uint64_t max_bytes);

  std::uint64_t total_bytes() const;
  std::size_t size() const;
  std::vector<std::string> keys_by_recency() const;  // least recent first
  const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Entry {
    std::uint64_t bytes = 0;
    std::uint64_t last_access = 0;
  };

  void load_index();
  void save_index() const;
  void erase_locked(const std::string& key);

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::uint64_t clock_ = 0;
  std::map<std::string, Entry> entries_;
  std::map<std::string, int> pins_;
};

}  // namespace semforge
