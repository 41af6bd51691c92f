#ifndef AMNESIA_TEST_COMMON_HPP
#define AMNESIA_TEST_COMMON_HPP

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "amnesia/aes.hpp"
#include "amnesia/util.hpp"

namespace testing_support {

inline amnesia::aes::Block block_from_hex(std::string_view hex) {
  return amnesia::aes::to_block(amnesia::from_hex(hex));
}

inline amnesia::aes::Block random_block(std::mt19937_64& gen) {
  amnesia::aes::Block b;
  for (auto& x : b) x = static_cast<std::uint8_t>(gen());
  return b;
}

// Naive substring scan, independent of the library's searcher.
inline bool contains(std::span<const std::uint8_t> hay, std::span<const std::uint8_t> needle) {
  if (needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i)))
      return true;
  }
  return false;
}

// True if a 64-bit register value carries any 4-byte column of `key`.
inline bool holds_key_bytes(std::uint64_t value, const amnesia::aes::Block& key) {
  for (int half = 0; half < 2; ++half) {
    const auto chunk = static_cast<std::uint32_t>(value >> (32 * half));
    if (chunk == 0) continue;
    for (int c = 0; c < 4; ++c) {
      std::uint32_t col = 0;
      for (int i = 0; i < 4; ++i) col |= std::uint32_t{key[4 * c + i]} << (8 * i);
      if (chunk == col) return true;
    }
  }
  return false;
}

}  // namespace testing_support

#endif
