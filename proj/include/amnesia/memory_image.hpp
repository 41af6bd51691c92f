#ifndef AMNESIA_MEMORY_IMAGE_HPP
#define AMNESIA_MEMORY_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace amnesia {

/// Byte-exact copy of simulated RAM.
///
/// The timestamp is the machine's instruction counter at capture time,
/// which keeps images reproducible across runs with the same seed.
struct MemoryImage {
  struct Meta {
    std::uint64_t size = 0;
    std::string config_digest;
    std::uint64_t timestamp = 0;

    friend bool operator==(const Meta&, const Meta&) = default;
  };

  std::vector<std::uint8_t> bytes;
  Meta meta;

  std::size_t size() const { return bytes.size(); }
  friend bool operator==(const MemoryImage&, const MemoryImage&) = default;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& raw) {
  auto p = raw;
  p += ".json";
  return p;
}

/// Writes `raw` (the bytes) and `raw.json` (the metadata record).
inline void save_image(const MemoryImage& img, const std::filesystem::path& raw) {
  if (img.meta.size != img.bytes.size()) {
    throw std::invalid_argument("save_image: metadata size mismatch");
  }
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_image: cannot open " + raw.string());
  out.write(reinterpret_cast<const char*>(img.bytes.data()),
            static_cast<std::streamsize>(img.bytes.size()));
  if (!out) throw std::runtime_error("save_image: write failed");

  nlohmann::json meta = {{"size", img.meta.size},
                         {"config_digest", img.meta.config_digest},
                         {"timestamp", img.meta.timestamp}};
  std::ofstream side(sidecar_path(raw), std::ios::trunc);
  if (!side) throw std::runtime_error("save_image: cannot open sidecar");
  side << meta.dump(2) << '\n';
}

inline MemoryImage load_image(const std::filesystem::path& raw) {
  std::ifstream side(sidecar_path(raw));
  if (!side) throw std::runtime_error("load_image: missing sidecar for " + raw.string());
  const auto meta = nlohmann::json::parse(side);

  MemoryImage img;
  img.meta.size = meta.at("size").get<std::uint64_t>();
  img.meta.config_digest = meta.at("config_digest").get<std::string>();
  img.meta.timestamp = meta.at("timestamp").get<std::uint64_t>();

  std::ifstream in(raw, std::ios::binary);
  if (!in) throw std::runtime_error("load_image: cannot open " + raw.string());
  img.bytes.assign(std::istreambuf_iterator<char>(in), {});
  if (img.bytes.size() != img.meta.size) {
    throw std::runtime_error("load_image: raw length does not match sidecar");
  }
  return img;
}

}  // namespace amnesia

#endif  // AMNESIA_MEMORY_IMAGE_HPP
