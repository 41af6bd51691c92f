#ifndef AMNESIA_COLDBOOT_HPP
#define AMNESIA_COLDBOOT_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "amnesia/aes.hpp"
#include "amnesia/engines.hpp"
#include "amnesia/keymaster.hpp"
#include "amnesia/machine.hpp"
#include "amnesia/memory_image.hpp"
#include "amnesia/util.hpp"

// The attacker's side: capture RAM, let it decay, look for keys.

namespace amnesia::coldboot {

/// Flips each bit independently with probability `p`, deterministically
/// for a given seed.
inline MemoryImage decay(const MemoryImage& img, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("decay probability must be in [0, 1]");
  MemoryImage out = img;
  if (p == 0.0) return out;
  if (p == 1.0) {
    for (auto& b : out.bytes) b = static_cast<std::uint8_t>(~b);
    return out;
  }
  // Jump straight between flipped bits: gaps are geometric.
  std::mt19937_64 gen(seed);
  std::geometric_distribution<std::uint64_t> gap(p);
  const std::uint64_t total_bits = std::uint64_t{out.bytes.size()} * 8;
  for (std::uint64_t bit = gap(gen); bit < total_bits; bit += 1 + gap(gen)) {
    out.bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

inline std::uint64_t hamming_distance(std::span<const std::uint8_t> a,
                                      std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("hamming_distance: size mismatch");
  std::uint64_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  return d;
}

/// Every byte offset where `needle` occurs.
inline std::vector<std::size_t> search_needle(const MemoryImage& img,
                                              std::span<const std::uint8_t> needle) {
  if (needle.empty()) throw std::invalid_argument("search_needle: empty needle");
  std::vector<std::size_t> hits;
  const std::boyer_moore_horspool_searcher searcher(needle.begin(), needle.end());
  auto it = img.bytes.begin();
  while (true) {
    it = std::search(it, img.bytes.end(), searcher);
    if (it == img.bytes.end()) break;
    hits.push_back(static_cast<std::size_t>(it - img.bytes.begin()));
    ++it;
  }
  return hits;
}

struct Recovery {
  std::size_t offset = 0;
  aes::Block key{};

  friend bool operator==(const Recovery&, const Recovery&) = default;
};

inline constexpr std::size_t schedule_bytes = aes::schedule_length * aes::block_size;

/// Treats every 16-byte window as a candidate AES-128 key and reports the
/// ones whose expanded round keys 1..10 match the following 160 bytes to
/// within `tolerance_bits` flipped bits.
inline std::vector<Recovery> scan_key_schedules(const MemoryImage& img, unsigned tolerance_bits) {
  std::vector<Recovery> found;
  const auto& bytes = img.bytes;
  if (bytes.size() < schedule_bytes) return found;
  for (std::size_t o = 0; o + schedule_bytes <= bytes.size(); ++o) {
    auto w = aes::detail::to_words(aes::to_block(std::span(bytes).subspan(o, 16)));
    unsigned errors = 0;
    for (int r = 1; r <= aes::num_rounds && errors <= tolerance_bits; ++r) {
      w = aes::detail::step_words(w, r);
      const auto* p = &bytes[o + 16 * static_cast<std::size_t>(r)];
      for (int c = 0; c < 4; ++c) {
        errors += std::popcount(w[c] ^ aes::detail::load_le32(p + 4 * c));
      }
    }
    if (errors <= tolerance_bits) {
      found.push_back({o, aes::to_block(std::span(bytes).subspan(o, 16))});
    }
  }
  return found;
}

/// Known byte string the attack should look for (ground truth supplied by
/// the experiment, not by the scanner).
struct Probe {
  std::string label;
  std::vector<std::uint8_t> needle;
};

struct Sighting {
  std::string label;
  std::vector<std::uint8_t> needle;
  std::vector<std::size_t> offsets;
};

struct AttackReport {
  double decay = 0.0;
  unsigned tolerance = 0;
  std::uint64_t seed = 0;
  std::uint64_t image_size = 0;
  std::uint64_t flipped_bits = 0;
  std::vector<Recovery> recovered;
  std::vector<Sighting> sightings;

  bool recovered_key(const aes::Block& key) const {
    return std::any_of(recovered.begin(), recovered.end(),
                       [&](const Recovery& r) { return r.key == key; });
  }

  /// Offsets for a probe label; empty if it was never seen.
  std::vector<std::size_t> sighted(const std::string& label) const {
    for (const auto& s : sightings)
      if (s.label == label) return s.offsets;
    return {};
  }

  nlohmann::json to_json() const {
    nlohmann::json rec = nlohmann::json::array();
    for (const auto& r : recovered) rec.push_back({{"offset", r.offset}, {"key", to_hex(r.key)}});
    nlohmann::json sight = nlohmann::json::array();
    for (const auto& s : sightings) {
      sight.push_back({{"label", s.label}, {"needle", to_hex(s.needle)}, {"offsets", s.offsets}});
    }
    return {{"parameters", {{"decay", decay}, {"tolerance", tolerance}, {"seed", seed}}},
            {"image_size", image_size},
            {"flipped_bits", flipped_bits},
            {"recovered_keys", rec},
            {"sightings", sight}};
  }
};

/// Capture, decay, then run both scans over the degraded image.
inline AttackReport attack(const Machine& m, double p, unsigned tolerance, std::uint64_t seed,
                           std::span<const Probe> probes = {}) {
  const auto captured = m.snapshot_ram();
  const auto img = decay(captured, p, seed);
  AttackReport report;
  report.decay = p;
  report.tolerance = tolerance;
  report.seed = seed;
  report.image_size = img.size();
  report.flipped_bits = hamming_distance(captured.bytes, img.bytes);
  report.recovered = scan_key_schedules(img, tolerance);
  for (const auto& probe : probes) {
    report.sightings.push_back({probe.label, probe.needle, search_needle(img, probe.needle)});
  }
  return report;
}

/// What the experimenter knows about a staged run. The attack never sees
/// this; it only decides which sightings count as key material.
struct GroundTruth {
  std::optional<aes::Block> master;
  aes::Block volume_key{};
  std::vector<aes::Block> round_keys;
  std::optional<aes::Block> wrapped_first;
  std::optional<aes::Block> wrapped_last;

  std::vector<Probe> probes() const {
    std::vector<Probe> out;
    auto add = [&](std::string label, const aes::Block& b) {
      out.push_back({std::move(label), {b.begin(), b.end()}});
    };
    if (master) add("master_key", *master);
    add("volume_key", volume_key);
    for (std::size_t r = 1; r < round_keys.size(); ++r) add("rk" + std::to_string(r), round_keys[r]);
    if (wrapped_first) add("wrapped_first", *wrapped_first);
    if (wrapped_last) add("wrapped_last", *wrapped_last);
    return out;
  }

  /// True if any master, volume or round key shows up in the report.
  bool key_exposed(const AttackReport& r) const {
    auto hit = [&](const aes::Block& k) { return r.recovered_key(k); };
    if (master && hit(*master)) return true;
    for (const auto& k : round_keys)
      if (hit(k)) return true;
    for (const auto& s : r.sightings) {
      if (s.label.rfind("wrapped", 0) != 0 && !s.offsets.empty()) return true;
    }
    return false;
  }
};

struct Scenario {
  Machine machine;
  AesContext context;
  GroundTruth truth;
};

/// Seeded victim: one machine, one volume key, then `ops` block operations
/// alternating encrypt and decrypt. A supplied key stands in for an
/// attacker-chosen one.
inline Scenario stage(Variant variant, std::uint64_t seed, std::uint64_t ops,
                      std::optional<aes::Block> volume_key = std::nullopt) {
  Scenario s{Machine(MachineConfig{.mode = variant == Variant::plain ? Mode::audit
                                                                     : Mode::enforcing}),
             {},
             {}};
  std::mt19937_64 gen(seed);
  auto random_block = [&] {
    aes::Block b;
    for (std::size_t i = 0; i < b.size(); i += 8) store_le64(&b[i], gen());
    return b;
  };
  s.truth.volume_key = volume_key ? *volume_key : random_block();

  auto rng = Rng::from_seed(seed);
  if (variant != Variant::plain) {
    // set_key draws the master key first; a copy of the generator replays it.
    auto replay = rng;
    s.truth.master = replay.next_block();
  }
  s.context = set_key(s.machine, s.truth.volume_key, variant, &rng);

  const auto schedule = aes::expand_key(s.truth.volume_key);
  for (const auto& rk : schedule) s.truth.round_keys.push_back(rk.bytes);
  if (variant != Variant::plain) {
    s.truth.wrapped_first = amnesia::wrapped_first(s.machine, s.context);
    s.truth.wrapped_last = amnesia::wrapped_last(s.machine, s.context);
  }

  auto block = random_block();
  for (std::uint64_t i = 0; i < ops; ++i) {
    block = (i % 2 == 0) ? engines::encrypt(s.machine, s.context, block)
                         : engines::decrypt(s.machine, s.context, block);
  }
  return s;
}

}  // namespace amnesia::coldboot

#endif  // AMNESIA_COLDBOOT_HPP
