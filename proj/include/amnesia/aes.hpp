#ifndef AMNESIA_AES_HPP
#define AMNESIA_AES_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "amnesia/aes_tables.hpp"

/// Reference AES-128: key expansion, single-round key stepping in both
/// directions, and block encryption/decryption against a full schedule.
///
/// Everything here is a pure function over value types. The simulated
/// machine in machine.hpp runs the same algorithm register by register;
/// this module is the host-side definition it is checked against.
namespace amnesia::aes {

inline constexpr std::size_t block_size = 16;
inline constexpr std::size_t key_size = 16;
inline constexpr int num_rounds = 10;
inline constexpr std::size_t schedule_length = num_rounds + 1;

using Block = std::array<std::uint8_t, block_size>;

struct RoundKey {
  Block bytes{};
  int round_index = 0;

  friend bool operator==(const RoundKey&, const RoundKey&) = default;
};

/// Eleven round keys: the cipher key followed by ten derived keys.
class KeySchedule {
 public:
  using Keys = std::array<RoundKey, schedule_length>;

  explicit KeySchedule(const Keys& keys) : keys_(keys) {
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i].round_index != static_cast<int>(i)) {
        throw std::invalid_argument("KeySchedule: round indices out of order");
      }
    }
  }

  const RoundKey& operator[](std::size_t i) const { return keys_.at(i); }
  constexpr std::size_t size() const { return keys_.size(); }
  auto begin() const { return keys_.begin(); }
  auto end() const { return keys_.end(); }

  friend bool operator==(const KeySchedule&, const KeySchedule&) = default;

 private:
  Keys keys_;
};

inline Block to_block(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != block_size) {
    throw std::invalid_argument("expected 16 bytes, got " +
                                std::to_string(bytes.size()));
  }
  Block b;
  for (std::size_t i = 0; i < block_size; ++i) b[i] = bytes[i];
  return b;
}

namespace detail {

constexpr std::uint32_t load_le32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

constexpr void store_le32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

using Words = std::array<std::uint32_t, 4>;

constexpr Words to_words(const Block& b) {
  return {load_le32(&b[0]), load_le32(&b[4]), load_le32(&b[8]),
          load_le32(&b[12])};
}

constexpr Block from_words(const Words& w) {
  Block b{};
  for (int c = 0; c < 4; ++c) store_le32(&b[4 * c], w[c]);
  return b;
}

constexpr std::uint8_t byte_of(std::uint32_t w, int i) {
  return static_cast<std::uint8_t>(w >> (8 * i));
}

// SubWord(RotWord(w)) xor Rcon, the nonlinear term of the key recurrence.
constexpr std::uint32_t schedule_core(std::uint32_t w, int round) {
  using tables::sbox;
  return (sbox[byte_of(w, 1)] | (sbox[byte_of(w, 2)] << 8) |
          (sbox[byte_of(w, 3)] << 16) | (sbox[byte_of(w, 0)] << 24)) ^
         tables::rcon[round];
}

// Moves a round key from index `round - 1` to `round`.
constexpr Words step_words(Words w, int round) {
  w[0] ^= schedule_core(w[3], round);
  w[1] ^= w[0];
  w[2] ^= w[1];
  w[3] ^= w[2];
  return w;
}

// Inverse of step_words: moves from index `round` back to `round - 1`.
// The XORs cancel in reverse word order; w3 is recovered before it is
// needed to undo the nonlinear term.
constexpr Words unstep_words(Words w, int round) {
  w[3] ^= w[2];
  w[2] ^= w[1];
  w[1] ^= w[0];
  w[0] ^= schedule_core(w[3], round);
  return w;
}

constexpr std::uint32_t inv_mix_word(std::uint32_t w) {
  using tables::sbox;
  using tables::td;
  return td[0][sbox[byte_of(w, 0)]] ^ td[1][sbox[byte_of(w, 1)]] ^
         td[2][sbox[byte_of(w, 2)]] ^ td[3][sbox[byte_of(w, 3)]];
}

}  // namespace detail

inline KeySchedule expand_key(std::span<const std::uint8_t> key) {
  if (key.size() != key_size) {
    throw std::invalid_argument("AES-128 key must be 16 bytes, got " +
                                std::to_string(key.size()));
  }
  std::array<std::uint32_t, 4 * schedule_length> w{};
  for (int i = 0; i < 4; ++i) w[i] = detail::load_le32(&key[4 * i]);
  for (std::size_t i = 4; i < w.size(); ++i) {
    auto t = w[i - 1];
    if (i % 4 == 0) t = detail::schedule_core(t, static_cast<int>(i / 4));
    w[i] = w[i - 4] ^ t;
  }
  KeySchedule::Keys keys{};
  for (std::size_t r = 0; r < schedule_length; ++r) {
    keys[r].round_index = static_cast<int>(r);
    keys[r].bytes = detail::from_words({w[4 * r], w[4 * r + 1], w[4 * r + 2],
                                        w[4 * r + 3]});
  }
  return KeySchedule(keys);
}

inline RoundKey step_round_key(const RoundKey& rk) {
  if (rk.round_index < 0 || rk.round_index >= num_rounds) {
    throw std::out_of_range("step_round_key: cannot step past round 10");
  }
  const int next = rk.round_index + 1;
  return {detail::from_words(detail::step_words(detail::to_words(rk.bytes), next)),
          next};
}

inline RoundKey unstep_round_key(const RoundKey& rk) {
  if (rk.round_index <= 0 || rk.round_index > num_rounds) {
    throw std::out_of_range("unstep_round_key: cannot unstep round 0");
  }
  return {detail::from_words(
              detail::unstep_words(detail::to_words(rk.bytes), rk.round_index)),
          rk.round_index - 1};
}

inline Block encrypt_block(const KeySchedule& schedule, const Block& plaintext) {
  using detail::byte_of;
  using tables::sbox;
  using tables::te;

  auto s = detail::to_words(plaintext);
  auto k = detail::to_words(schedule[0].bytes);
  for (int c = 0; c < 4; ++c) s[c] ^= k[c];

  for (int r = 1; r < num_rounds; ++r) {
    k = detail::to_words(schedule[r].bytes);
    detail::Words t{};
    for (int c = 0; c < 4; ++c) {
      t[c] = te[0][byte_of(s[c], 0)] ^ te[1][byte_of(s[(c + 1) % 4], 1)] ^
             te[2][byte_of(s[(c + 2) % 4], 2)] ^
             te[3][byte_of(s[(c + 3) % 4], 3)] ^ k[c];
    }
    s = t;
  }

  k = detail::to_words(schedule[num_rounds].bytes);
  detail::Words t{};
  for (int c = 0; c < 4; ++c) {
    t[c] = (sbox[byte_of(s[c], 0)] | (sbox[byte_of(s[(c + 1) % 4], 1)] << 8) |
            (sbox[byte_of(s[(c + 2) % 4], 2)] << 16) |
            (sbox[byte_of(s[(c + 3) % 4], 3)] << 24)) ^
           k[c];
  }
  return detail::from_words(t);
}

/// Equivalent inverse cipher: round keys 1..9 pass through InvMixColumns
/// so each round is a single table pass followed by a key XOR.
inline Block decrypt_block(const KeySchedule& schedule, const Block& ciphertext) {
  using detail::byte_of;
  using tables::inv_sbox;
  using tables::td;

  auto s = detail::to_words(ciphertext);
  auto k = detail::to_words(schedule[num_rounds].bytes);
  for (int c = 0; c < 4; ++c) s[c] ^= k[c];

  for (int r = num_rounds - 1; r >= 1; --r) {
    k = detail::to_words(schedule[r].bytes);
    detail::Words t{};
    for (int c = 0; c < 4; ++c) {
      t[c] = td[0][byte_of(s[c], 0)] ^ td[1][byte_of(s[(c + 3) % 4], 1)] ^
             td[2][byte_of(s[(c + 2) % 4], 2)] ^
             td[3][byte_of(s[(c + 1) % 4], 3)] ^ detail::inv_mix_word(k[c]);
    }
    s = t;
  }

  k = detail::to_words(schedule[0].bytes);
  detail::Words t{};
  for (int c = 0; c < 4; ++c) {
    t[c] = (inv_sbox[byte_of(s[c], 0)] |
            (inv_sbox[byte_of(s[(c + 3) % 4], 1)] << 8) |
            (inv_sbox[byte_of(s[(c + 2) % 4], 2)] << 16) |
            (inv_sbox[byte_of(s[(c + 1) % 4], 3)] << 24)) ^
           k[c];
  }
  return detail::from_words(t);
}

inline Block encrypt_block(const KeySchedule& schedule,
                           std::span<const std::uint8_t> plaintext) {
  return encrypt_block(schedule, to_block(plaintext));
}

inline Block decrypt_block(const KeySchedule& schedule,
                           std::span<const std::uint8_t> ciphertext) {
  return decrypt_block(schedule, to_block(ciphertext));
}

}  // namespace amnesia::aes

#endif  // AMNESIA_AES_HPP
