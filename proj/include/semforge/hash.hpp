#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace semforge {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view data);
std::string to_hex(const Digest& d);
std::string sha256_hex(std::string_view data);

/// Incremental SHA-256 with length-prefixed fields so concatenations can't collide.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& field(std::string_view bytes);
  Hasher& field(std::uint64_t n);
  Digest finish();

 private:
  void* ctx_;
};

}  // namespace semforge
