#ifndef AMNESIA_AES_TABLES_HPP
#define AMNESIA_AES_TABLES_HPP

#include <array>
#include <cstdint>

// Constant lookup tables for AES-128, generated at compile time.
//
// Words use little-endian byte order: byte r of a state column (row r)
// lives in bits [8r, 8r+8). The T-tables fold SubBytes and MixColumns
// (or their inverses) into one lookup per state byte.

namespace amnesia::aes::tables {

using Table = std::array<std::uint32_t, 256>;

namespace detail {

constexpr std::uint8_t xtime(std::uint8_t a) {
  return static_cast<std::uint8_t>((a << 1) ^ ((a & 0x80) ? 0x1b : 0x00));
}

constexpr std::uint8_t gf_mul(std::uint8_t a, std::uint8_t b) {
  std::uint8_t r = 0;
  while (b) {
    if (b & 1) r ^= a;
    a = xtime(a);
    b >>= 1;
  }
  return r;
}

constexpr std::uint8_t gf_inverse(std::uint8_t a) {
  if (a == 0) return 0;
  // a^254 = a^-1 in GF(2^8)
  std::uint8_t result = 1;
  std::uint8_t base = a;
  for (int e = 254; e > 0; e >>= 1) {
    if (e & 1) result = gf_mul(result, base);
    base = gf_mul(base, base);
  }
  return result;
}

constexpr std::uint8_t rotl8(std::uint8_t x, int n) {
  return static_cast<std::uint8_t>((x << n) | (x >> (8 - n)));
}

constexpr std::array<std::uint8_t, 256> make_sbox() {
  std::array<std::uint8_t, 256> s{};
  for (int i = 0; i < 256; ++i) {
    const auto b = gf_inverse(static_cast<std::uint8_t>(i));
    s[i] = static_cast<std::uint8_t>(b ^ rotl8(b, 1) ^ rotl8(b, 2) ^
                                     rotl8(b, 3) ^ rotl8(b, 4) ^ 0x63);
  }
  return s;
}

constexpr std::array<std::uint8_t, 256> make_inv_sbox(
    const std::array<std::uint8_t, 256>& s) {
  std::array<std::uint8_t, 256> inv{};
  for (int i = 0; i < 256; ++i) inv[s[i]] = static_cast<std::uint8_t>(i);
  return inv;
}

constexpr std::uint32_t pack(std::uint8_t r0, std::uint8_t r1, std::uint8_t r2,
                             std::uint8_t r3) {
  return std::uint32_t{r0} | (std::uint32_t{r1} << 8) |
         (std::uint32_t{r2} << 16) | (std::uint32_t{r3} << 24);
}

constexpr std::uint32_t rotl32(std::uint32_t x, int n) {
  return n == 0 ? x : (x << n) | (x >> (32 - n));
}

constexpr std::array<std::uint8_t, 256> sbox_bytes = make_sbox();
constexpr std::array<std::uint8_t, 256> inv_sbox_bytes =
    make_inv_sbox(sbox_bytes);

constexpr Table widen(const std::array<std::uint8_t, 256>& s) {
  Table t{};
  for (int i = 0; i < 256; ++i) t[i] = s[i];
  return t;
}

// Forward round table for the byte arriving in row `row`.
constexpr Table make_te(int row) {
  Table t{};
  for (int i = 0; i < 256; ++i) {
    const auto s = sbox_bytes[i];
    t[i] = rotl32(pack(gf_mul(s, 2), s, s, gf_mul(s, 3)), 8 * row);
  }
  return t;
}

// Inverse round table for the byte arriving in row `row`.
constexpr Table make_td(int row) {
  Table t{};
  for (int i = 0; i < 256; ++i) {
    const auto s = inv_sbox_bytes[i];
    t[i] = rotl32(pack(gf_mul(s, 14), gf_mul(s, 9), gf_mul(s, 13),
                       gf_mul(s, 11)),
                  8 * row);
  }
  return t;
}

}  // namespace detail

inline constexpr Table sbox = detail::widen(detail::sbox_bytes);
inline constexpr Table inv_sbox = detail::widen(detail::inv_sbox_bytes);
inline constexpr std::array<Table, 4> te = {detail::make_te(0), detail::make_te(1),
                                            detail::make_te(2), detail::make_te(3)};
inline constexpr std::array<Table, 4> td = {detail::make_td(0), detail::make_td(1),
                                            detail::make_td(2), detail::make_td(3)};

// Round constants; rcon[i] is used when deriving round key i (index 0 unused).
inline constexpr std::array<std::uint8_t, 11> rcon = {
    0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36};

}  // namespace amnesia::aes::tables

#endif  // AMNESIA_AES_TABLES_HPP
