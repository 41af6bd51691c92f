#ifndef AMNESIA_HARNESS_HPP
#define AMNESIA_HARNESS_HPP

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "amnesia/aes.hpp"
#include "amnesia/blockdev.hpp"
#include "amnesia/engines.hpp"
#include "amnesia/keymaster.hpp"
#include "amnesia/machine.hpp"
#include "amnesia/util.hpp"

namespace amnesia::harness {

/// Published reference slowdowns, printed next to measured ratios.
struct ReferenceFigures {
  static constexpr double device_vs_aes = 2.04;
  static constexpr double device_vs_naked = 2.23;
  static constexpr double cpu_vs_aes = 3.77;
};

enum class Target : std::uint8_t { amnesia, xornesia, plain, naked };

inline std::string_view target_name(Target t) {
  switch (t) {
    case Target::amnesia: return "amnesia";
    case Target::xornesia: return "xornesia";
    case Target::plain: return "plain";
    case Target::naked: return "naked";
  }
  return "?";
}

inline Target parse_target(std::string_view s) {
  if (s == "naked") return Target::naked;
  switch (parse_variant(s)) {
    case Variant::amnesia: return Target::amnesia;
    case Variant::xornesia: return Target::xornesia;
    case Variant::plain: return Target::plain;
  }
  throw std::invalid_argument("unknown target");
}

inline Variant to_variant(Target t) {
  switch (t) {
    case Target::amnesia: return Variant::amnesia;
    case Target::xornesia: return Variant::xornesia;
    case Target::plain: return Variant::plain;
    case Target::naked: break;
  }
  throw std::invalid_argument("naked has no cipher variant");
}

enum class Workload : std::uint8_t { cpu, seq_write, seq_read, random_read };

inline std::string_view workload_name(Workload w) {
  switch (w) {
    case Workload::cpu: return "cpu";
    case Workload::seq_write: return "seq-write";
    case Workload::seq_read: return "seq-read";
    case Workload::random_read: return "random-read";
  }
  return "?";
}

inline Workload parse_workload(std::string_view s) {
  if (s == "seq-write") return Workload::seq_write;
  if (s == "seq-read") return Workload::seq_read;
  if (s == "random-read") return Workload::random_read;
  throw std::invalid_argument("unknown workload '" + std::string(s) + "'");
}

struct BenchRow {
  std::string variant;
  std::string workload;
  std::uint64_t ops = 0;  // block operations (cpu) or sectors touched (device)
  double megabytes = 0.0;
  double wall_ms = 0.0;
  std::uint64_t instructions = 0;
  std::uint64_t round_calls = 0;
  double mb_per_s = 0.0;
  std::optional<double> ratio_vs_plain;
  std::string content_digest;  // device runs: SHA-256 of the backing file
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

inline aes::Block random_block(std::mt19937_64& gen) {
  aes::Block b;
  for (std::size_t i = 0; i < b.size(); i += 8) store_le64(&b[i], gen());
  return b;
}

inline std::string file_digest(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return to_hex(sha256(bytes));
}

}  // namespace detail

/// Runs `n_ops` block operations, alternating encrypt and decrypt, on one
/// machine and one key.
inline BenchRow bench_cpu(Variant variant, std::uint64_t n_ops, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Machine m(MachineConfig{.mode = variant == Variant::plain ? Mode::audit : Mode::enforcing});
  auto rng = Rng::from_seed(seed);
  auto key = detail::random_block(gen);
  const auto ctx = set_key(m, key, variant, &rng);
  secure_zero(key);
  m.reset_counters();

  auto block = detail::random_block(gen);
  const auto t0 = detail::Clock::now();
  for (std::uint64_t i = 0; i < n_ops; ++i) {
    block = (i % 2 == 0) ? engines::encrypt(m, ctx, block) : engines::decrypt(m, ctx, block);
  }
  BenchRow row;
  row.wall_ms = detail::elapsed_ms(t0);
  row.variant = variant_name(variant);
  row.workload = workload_name(Workload::cpu);
  row.ops = n_ops;
  row.megabytes = static_cast<double>(n_ops * aes::block_size) / (1024.0 * 1024.0);
  row.instructions = m.instruction_count();
  row.round_calls = m.round_calls();
  row.mb_per_s = row.wall_ms > 0 ? row.megabytes / (row.wall_ms / 1000.0) : 0.0;
  return row;
}

/// Drives a sector workload against a fresh device file in `dir`. The
/// naked target is the same loopback file with no encryption.
inline BenchRow bench_device(Target target, Workload workload, double megabytes,
                             std::uint64_t seed, const std::filesystem::path& dir) {
  if (workload == Workload::cpu) throw std::invalid_argument("use bench_cpu for cpu workloads");
  const auto sectors =
      static_cast<std::uint64_t>(megabytes * 1024.0 * 1024.0 / blockdev::sector_size);
  if (sectors == 0) throw std::invalid_argument("device benchmark needs at least one sector");

  std::mt19937_64 gen(seed);
  const auto key = detail::random_block(gen);
  const auto path = dir / ("bench-" + std::string(target_name(target)) + "-" +
                           std::string(workload_name(workload)) + ".img");

  std::optional<blockdev::Volume> volume;
  std::optional<blockdev::BackingFile> naked;
  if (target == Target::naked) {
    naked.emplace(blockdev::BackingFile::create(path, sectors));
  } else {
    volume.emplace(blockdev::Volume::create(path, sectors, std::span(&key, 1),
                                            blockdev::KeyMode::single, to_variant(target), seed));
  }

  auto write = [&](std::uint64_t n, const blockdev::Sector& s) {
    if (naked)
      naked->write(n, s);
    else
      volume->write_sector(n, s);
  };
  auto read = [&](std::uint64_t n) {
    blockdev::Sector s;
    if (naked)
      naked->read(n, s);
    else
      s = volume->read_sector(n);
    return s;
  };

  // Every workload sees the same seeded plaintext.
  std::mt19937_64 data_gen(seed ^ 0x5eed);
  auto pattern = [&](blockdev::Sector& s) {
    for (std::size_t i = 0; i < s.size(); i += 8) store_le64(&s[i], data_gen());
  };

  std::vector<std::uint64_t> order(sectors);
  for (std::uint64_t i = 0; i < sectors; ++i) order[i] = i;
  if (workload == Workload::random_read) std::shuffle(order.begin(), order.end(), gen);

  if (workload != Workload::seq_write) {
    blockdev::Sector s;
    for (std::uint64_t n = 0; n < sectors; ++n) {
      pattern(s);
      write(n, s);
    }
  }
  if (volume) volume->machine().reset_counters();

  std::uint64_t sink = 0;
  const auto t0 = detail::Clock::now();
  if (workload == Workload::seq_write) {
    blockdev::Sector s;
    for (std::uint64_t n = 0; n < sectors; ++n) {
      pattern(s);
      write(n, s);
    }
  } else {
    for (auto n : order) sink += read(n)[0];
  }
  if (naked) naked->flush();
  if (volume) volume->flush();

  BenchRow row;
  row.wall_ms = detail::elapsed_ms(t0);
  row.variant = target_name(target);
  row.workload = workload_name(workload);
  row.ops = sectors;
  row.megabytes = static_cast<double>(sectors * blockdev::sector_size) / (1024.0 * 1024.0);
  if (volume) {
    row.instructions = volume->machine().instruction_count();
    row.round_calls = volume->machine().round_calls();
  }
  row.mb_per_s = row.wall_ms > 0 ? row.megabytes / (row.wall_ms / 1000.0) : 0.0;
  row.content_digest = detail::file_digest(path);
  (void)sink;
  return row;
}

/// Fills ratio_vs_plain = wall(row) / wall(plain row of the same workload).
inline void fill_ratios(std::vector<BenchRow>& rows) {
  for (auto& r : rows) {
    for (const auto& base : rows) {
      if (base.variant == "plain" && base.workload == r.workload && base.wall_ms > 0) {
        r.ratio_vs_plain = r.wall_ms / base.wall_ms;
      }
    }
  }
}

inline std::string format_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "variant" << std::setw(13) << "workload" << std::right
      << std::setw(10) << "ops" << std::setw(9) << "MB" << std::setw(12) << "wall ms"
      << std::setw(14) << "instructions" << std::setw(10) << "MB/s" << std::setw(10) << "vs plain"
      << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.variant << std::setw(13) << r.workload << std::right
        << std::setw(10) << r.ops << std::setw(9) << std::setprecision(2) << r.megabytes
        << std::setw(12) << std::setprecision(1) << r.wall_ms << std::setw(14) << r.instructions
        << std::setw(10) << std::setprecision(2) << r.mb_per_s << std::setw(10);
    if (r.ratio_vs_plain)
      out << std::setprecision(2) << *r.ratio_vs_plain;
    else
      out << "-";
    out << '\n';
  }
  return out.str();
}

inline void write_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,workload,ops,megabytes,wall_ms,instructions,mb_per_s,ratio_vs_plain\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.workload << ',' << r.ops << ',' << r.megabytes << ','
        << r.wall_ms << ',' << r.instructions << ',' << r.mb_per_s << ',';
    if (r.ratio_vs_plain) out << *r.ratio_vs_plain;
    out << '\n';
  }
}

}  // namespace amnesia::harness

#endif  // AMNESIA_HARNESS_HPP
