#ifndef AMNESIA_BLOCKDEV_HPP
#define AMNESIA_BLOCKDEV_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "amnesia/aes.hpp"
#include "amnesia/engines.hpp"
#include "amnesia/keymaster.hpp"
#include "amnesia/machine.hpp"
#include "amnesia/util.hpp"

// Loopback-style encrypted block device over a regular file.
//
// Each 512-byte sector is CBC-encrypted on its own with
//   IV = little-endian sector number, zero-padded to 16 bytes.
// Chaining and IVs live here; the engines only ever see single blocks.
// In multikey64 mode sector n uses key n mod 64.

namespace amnesia::blockdev {

inline constexpr std::size_t sector_size = 512;
inline constexpr std::size_t blocks_per_sector = sector_size / aes::block_size;
inline constexpr std::size_t multikey_count = 64;

static_assert(sector_size % aes::block_size == 0);

using Sector = std::array<std::uint8_t, sector_size>;

enum class KeyMode : std::uint8_t { single, multikey64 };

inline std::string_view key_mode_name(KeyMode m) {
  return m == KeyMode::single ? "single" : "multikey64";
}

inline KeyMode parse_key_mode(std::string_view s) {
  if (s == "single") return KeyMode::single;
  if (s == "multikey64") return KeyMode::multikey64;
  throw std::invalid_argument("unknown key mode '" + std::string(s) + "'");
}

inline std::size_t key_count(KeyMode m) { return m == KeyMode::single ? 1 : multikey_count; }

inline aes::Block sector_iv(std::uint64_t n) {
  aes::Block iv{};
  store_le64(iv.data(), n);
  return iv;
}

/// Sector-granular access to the backing file. No encryption.
class BackingFile {
 public:
  static BackingFile create(const std::filesystem::path& path, std::uint64_t sector_count) {
    {
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("cannot create " + path.string());
    }
    std::filesystem::resize_file(path, sector_count * sector_size);
    return BackingFile(path);
  }

  explicit BackingFile(const std::filesystem::path& path)
      : path_(path), file_(path, std::ios::binary | std::ios::in | std::ios::out) {
    if (!file_) throw std::runtime_error("cannot open " + path.string());
    const auto bytes = std::filesystem::file_size(path);
    if (bytes % sector_size) {
      throw std::runtime_error(path.string() + ": length is not a whole number of sectors");
    }
    sector_count_ = bytes / sector_size;
  }

  std::uint64_t sector_count() const { return sector_count_; }
  const std::filesystem::path& path() const { return path_; }

  void read(std::uint64_t n, std::span<std::uint8_t, sector_size> out) {
    check(n);
    file_.seekg(static_cast<std::streamoff>(n * sector_size));
    file_.read(reinterpret_cast<char*>(out.data()), sector_size);
    if (!file_) throw std::runtime_error("read failed at sector " + std::to_string(n));
  }

  void write(std::uint64_t n, std::span<const std::uint8_t, sector_size> data) {
    check(n);
    file_.seekp(static_cast<std::streamoff>(n * sector_size));
    file_.write(reinterpret_cast<const char*>(data.data()), sector_size);
    if (!file_) throw std::runtime_error("write failed at sector " + std::to_string(n));
  }

  void flush() { file_.flush(); }

 private:
  void check(std::uint64_t n) const {
    if (n >= sector_count_) {
      throw std::out_of_range("sector " + std::to_string(n) + " beyond end of device (" +
                              std::to_string(sector_count_) + " sectors)");
    }
  }

  std::filesystem::path path_;
  std::fstream file_;
  std::uint64_t sector_count_ = 0;
};

inline std::filesystem::path header_path(const std::filesystem::path& data) {
  auto p = data;
  p += ".json";
  return p;
}

/// An open encrypted volume. Owns the machine its keys live on.
class Volume {
 public:
  /// Allocates the backing file and builds one context per key. The header
  /// sidecar records geometry and a salted key check value, never keys.
  static Volume create(const std::filesystem::path& path, std::uint64_t sector_count,
                       std::span<const aes::Block> keys, KeyMode mode, Variant variant,
                       std::uint64_t seed) {
    check_keys(keys, mode);
    auto rng = Rng::from_seed(seed);
    const auto salt = rng.next_block();
    auto file = BackingFile::create(path, sector_count);
    Volume v(std::move(file), mode, variant, keys, rng);
    v.salt_ = salt;
    v.write_header();
    return v;
  }

  /// Reopens a volume from its header, verifying the key check value.
  static Volume open(const std::filesystem::path& path, std::span<const aes::Block> keys,
                     std::uint64_t seed) {
    std::ifstream in(header_path(path));
    if (!in) throw std::runtime_error("missing volume header " + header_path(path).string());
    const auto h = nlohmann::json::parse(in);
    if (h.at("sector_size").get<std::size_t>() != sector_size) {
      throw std::runtime_error("unsupported sector size");
    }
    const auto mode = parse_key_mode(h.at("mode").get<std::string>());
    const auto variant = parse_variant(h.at("variant").get<std::string>());
    check_keys(keys, mode);
    auto rng = Rng::from_seed(seed);
    Volume v(BackingFile(path), mode, variant, keys, rng);
    if (v.sector_count() != h.at("sector_count").get<std::uint64_t>()) {
      throw std::runtime_error("backing file size does not match header");
    }
    const auto salt = from_hex(h.at("salt").get<std::string>());
    v.salt_ = aes::to_block(salt);
    const auto& expected = h.at("key_check");
    for (std::size_t i = 0; i < v.contexts_.size(); ++i) {
      if (expected.at(i).get<std::string>() != v.key_check(i)) {
        throw std::runtime_error("key " + std::to_string(i) + " does not match volume header");
      }
    }
    return v;
  }

  void write_sector(std::uint64_t n, std::span<const std::uint8_t> data) {
    if (data.size() != sector_size) {
      throw std::invalid_argument("sector data must be 512 bytes");
    }
    if (n >= sector_count()) throw std::out_of_range("sector out of range");
    const auto& ctx = context_for(n);
    Sector out;
    auto chain = sector_iv(n);
    for (std::size_t b = 0; b < blocks_per_sector; ++b) {
      aes::Block x;
      for (std::size_t i = 0; i < aes::block_size; ++i) {
        x[i] = data[b * aes::block_size + i] ^ chain[i];
      }
      chain = engines::encrypt(machine_, ctx, x);
      std::copy(chain.begin(), chain.end(), out.begin() + b * aes::block_size);
    }
    file_.write(n, out);
  }

  Sector read_sector(std::uint64_t n) {
    if (n >= sector_count()) throw std::out_of_range("sector out of range");
    const auto& ctx = context_for(n);
    Sector in;
    file_.read(n, in);
    Sector out;
    auto chain = sector_iv(n);
    for (std::size_t b = 0; b < blocks_per_sector; ++b) {
      const auto c = aes::to_block(std::span(in).subspan(b * aes::block_size, aes::block_size));
      const auto p = engines::decrypt(machine_, ctx, c);
      for (std::size_t i = 0; i < aes::block_size; ++i) {
        out[b * aes::block_size + i] = p[i] ^ chain[i];
      }
      chain = c;
    }
    return out;
  }

  std::size_t key_index(std::uint64_t n) const {
    return mode_ == KeyMode::multikey64 ? n % multikey_count : 0;
  }

  const AesContext& context_for(std::uint64_t n) const { return contexts_[key_index(n)]; }

  std::uint64_t sector_count() const { return file_.sector_count(); }
  KeyMode mode() const { return mode_; }
  Variant variant() const { return variant_; }
  const std::filesystem::path& path() const { return file_.path(); }
  const std::vector<AesContext>& contexts() const { return contexts_; }
  Machine& machine() { return machine_; }
  const Machine& machine() const { return machine_; }
  void flush() { file_.flush(); }

  nlohmann::json header() {
    nlohmann::json checks = nlohmann::json::array();
    for (std::size_t i = 0; i < contexts_.size(); ++i) checks.push_back(key_check(i));
    return {{"format", "amnesia-volume-1"},
            {"mode", key_mode_name(mode_)},
            {"variant", variant_name(variant_)},
            {"sector_size", sector_size},
            {"sector_count", sector_count()},
            {"iv", "sector-le64"},
            {"salt", to_hex(salt_)},
            {"key_check", checks}};
  }

 private:
  Volume(BackingFile file, KeyMode mode, Variant variant, std::span<const aes::Block> keys,
         Rng& rng)
      : machine_(MachineConfig{.mode = variant == Variant::plain ? Mode::audit
                                                                   : Mode::enforcing}),
        file_(std::move(file)),
        mode_(mode),
        variant_(variant) {
    for (const auto& k : keys) contexts_.push_back(set_key(machine_, k, variant, &rng));
  }

  static void check_keys(std::span<const aes::Block> keys, KeyMode mode) {
    if (keys.size() != key_count(mode)) {
      throw std::invalid_argument(std::string(key_mode_name(mode)) + " needs " +
                                  std::to_string(key_count(mode)) + " keys, got " +
                                  std::to_string(keys.size()));
    }
  }

  // First 8 bytes of SHA-256(salt || E_k(salt)). The cipher output is a
  // declassified block, so this never touches raw key bytes.
  std::string key_check(std::size_t i) {
    const auto c = engines::encrypt(machine_, contexts_[i], salt_);
    std::array<std::uint8_t, 32> buf{};
    std::copy(salt_.begin(), salt_.end(), buf.begin());
    std::copy(c.begin(), c.end(), buf.begin() + 16);
    const auto d = sha256(buf);
    return to_hex(std::span(d).first(8));
  }

  void write_header() {
    std::ofstream out(header_path(path()), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write volume header");
    out << header().dump(2) << '\n';
  }

  Machine machine_;
  BackingFile file_;
  KeyMode mode_;
  Variant variant_;
  std::vector<AesContext> contexts_;
  aes::Block salt_{};
};

}  // namespace amnesia::blockdev

#endif  // AMNESIA_BLOCKDEV_HPP
