#ifndef AMNESIA_CLI_HPP
#define AMNESIA_CLI_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "amnesia/aes.hpp"
#include "amnesia/blockdev.hpp"
#include "amnesia/coldboot.hpp"
#include "amnesia/harness.hpp"
#include "amnesia/keymaster.hpp"
#include "amnesia/util.hpp"

namespace amnesia::cli {

inline constexpr int exit_usage = 2;
inline constexpr int exit_failure = 1;

namespace detail {

/// Raw key file: 16 bytes per key. The buffer is wiped after parsing.
inline std::vector<aes::Block> read_keys(const std::filesystem::path& p, std::size_t count) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open key file " + p.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), {});
  if (raw.size() != count * aes::key_size) {
    const auto got = raw.size();
    secure_zero(raw);
    throw std::runtime_error("key file must hold " + std::to_string(count * aes::key_size) +
                             " bytes, has " + std::to_string(got));
  }
  std::vector<aes::Block> keys(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>(i * aes::key_size), aes::key_size,
                keys[i].begin());
  }
  secure_zero(raw);
  return keys;
}

inline void wipe(std::vector<aes::Block>& keys) {
  for (auto& k : keys) secure_zero(k);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void print_attack(std::ostream& out, Variant v, const coldboot::AttackReport& r,
                         const coldboot::GroundTruth& truth) {
  out << "variant " << variant_name(v) << ": decay " << r.decay << ", tolerance " << r.tolerance
      << ", flipped bits " << r.flipped_bits << '\n';
  if (r.recovered.empty()) out << "  no key schedules found\n";
  for (const auto& rec : r.recovered) {
    out << "  key schedule at 0x" << std::hex << rec.offset << std::dec << ": "
        << to_hex(rec.key) << (rec.key == truth.volume_key ? "  (volume key)" : "") << '\n';
  }
  for (const auto& s : r.sightings) {
    if (s.offsets.empty()) continue;
    out << "  " << s.label << " found at";
    for (auto o : s.offsets) out << " 0x" << std::hex << o << std::dec;
    out << '\n';
  }
  out << "  key material exposed: " << (truth.key_exposed(r) ? "yes" : "no") << '\n';
}

}  // namespace detail

/// Runs the command line `args` (without the program name). Returns the
/// process exit code.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cold-boot resistant disk encryption on a simulated machine", "amnesia"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string variant_s = "amnesia";

  // volume
  auto* volume = app.add_subcommand("volume", "Encrypted volume over a backing file");
  volume->require_subcommand(1);
  std::filesystem::path vol_path, key_path, data_path;
  std::uint64_t sectors = 0, sector = 0, count = 1;
  std::string mode_s = "single";

  auto* vcreate = volume->add_subcommand("create", "Allocate a new volume");
  vcreate->add_option("--path", vol_path, "Backing file")->required();
  vcreate->add_option("--sectors", sectors, "Sector count")->required()->check(CLI::PositiveNumber);
  vcreate->add_option("--keyfile", key_path, "Raw key file (16 bytes per key)")->required();
  vcreate->add_option("--mode", mode_s)->check(CLI::IsMember({"single", "multikey64"}));
  vcreate->add_option("--variant", variant_s)->check(CLI::IsMember({"amnesia", "xornesia", "plain"}));
  vcreate->add_option("--seed", seed);

  auto* vwrite = volume->add_subcommand("write", "Write a file's bytes starting at a sector");
  vwrite->add_option("--path", vol_path)->required();
  vwrite->add_option("--keyfile", key_path)->required();
  vwrite->add_option("--sector", sector);
  vwrite->add_option("--in", data_path, "Input, a whole number of 512-byte sectors")->required();
  vwrite->add_option("--seed", seed);

  auto* vread = volume->add_subcommand("read", "Read sectors out as plaintext");
  vread->add_option("--path", vol_path)->required();
  vread->add_option("--keyfile", key_path)->required();
  vread->add_option("--sector", sector);
  vread->add_option("--count", count)->check(CLI::PositiveNumber);
  vread->add_option("--out", data_path, "Output file (hex to stdout if omitted)");
  vread->add_option("--seed", seed);

  // attack
  auto* attack = app.add_subcommand("attack", "Cold-boot attack simulation");
  attack->require_subcommand(1);
  auto* arun = attack->add_subcommand("run", "Stage a victim, capture RAM, scan it");
  double decay = 0.0;
  unsigned tolerance = 0;
  std::uint64_t ops = 100;
  std::filesystem::path report_path, image_path;
  std::string key_hex;
  arun->add_option("--variant", variant_s)->check(CLI::IsMember({"amnesia", "xornesia", "plain"}));
  arun->add_option("--decay", decay, "Per-bit flip probability")->check(CLI::Range(0.0, 1.0));
  arun->add_option("--tolerance", tolerance, "Bit errors allowed in a schedule match");
  arun->add_option("--seed", seed);
  arun->add_option("--ops", ops, "Block operations before capture");
  arun->add_option("--key", key_hex, "Volume key in hex (attacker-chosen)");
  arun->add_option("--report", report_path, "Write the JSON report here");
  arun->add_option("--image", image_path, "Save the captured image here");

  // bench
  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  std::string bench_variant = "all";
  std::string workload_s = "all";
  std::uint64_t bench_ops = 10000;
  double mb = 1.0;
  std::filesystem::path csv_path;
  std::filesystem::path dir = std::filesystem::temp_directory_path();

  auto* bcpu = bench->add_subcommand("cpu", "Block operations only");
  bcpu->add_option("--variant", bench_variant)
      ->check(CLI::IsMember({"all", "amnesia", "xornesia", "plain"}));
  bcpu->add_option("--ops", bench_ops)->check(CLI::PositiveNumber);
  bcpu->add_option("--seed", seed);
  bcpu->add_option("--csv", csv_path);

  auto* bdev = bench->add_subcommand("device", "Sector workloads through the volume layer");
  bdev->add_option("--variant", bench_variant)
      ->check(CLI::IsMember({"all", "amnesia", "xornesia", "plain", "naked"}));
  bdev->add_option("--workload", workload_s)
      ->check(CLI::IsMember({"all", "seq-write", "seq-read", "random-read"}));
  bdev->add_option("--mb", mb)->check(CLI::PositiveNumber);
  bdev->add_option("--seed", seed);
  bdev->add_option("--dir", dir, "Directory for scratch device files")->check(CLI::ExistingDirectory);
  bdev->add_option("--csv", csv_path);

  // demo
  auto* demo = app.add_subcommand("demo", "Demonstrations");
  demo->require_subcommand(1);
  auto* dcold = demo->add_subcommand("coldboot", "Same attack against plain and amnesia");
  dcold->add_option("--seed", seed);
  dcold->add_option("--ops", ops);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << "run with --help for usage\n";
    return exit_usage;
  }

  try {
    if (*vcreate) {
      const auto mode = blockdev::parse_key_mode(mode_s);
      auto keys = detail::read_keys(key_path, blockdev::key_count(mode));
      auto v = blockdev::Volume::create(vol_path, sectors, keys, mode, parse_variant(variant_s),
                                        seed);
      detail::wipe(keys);
      out << "created " << vol_path.string() << ": " << sectors << " sectors, "
          << blockdev::key_mode_name(mode) << ", " << variant_s << '\n';
      return 0;
    }

    if (*vwrite || *vread) {
      std::ifstream hin(blockdev::header_path(vol_path));
      if (!hin) throw std::runtime_error("missing volume header for " + vol_path.string());
      const auto mode = blockdev::parse_key_mode(nlohmann::json::parse(hin).at("mode").get<std::string>());
      auto keys = detail::read_keys(key_path, blockdev::key_count(mode));
      auto v = blockdev::Volume::open(vol_path, keys, seed);
      detail::wipe(keys);

      if (*vwrite) {
        const auto data = detail::read_file(data_path);
        if (data.empty() || data.size() % blockdev::sector_size) {
          err << "error: input must be a whole number of 512-byte sectors\n";
          return exit_usage;
        }
        const auto n = data.size() / blockdev::sector_size;
        for (std::size_t i = 0; i < n; ++i) {
          v.write_sector(sector + i, std::span(data).subspan(i * blockdev::sector_size,
                                                             blockdev::sector_size));
        }
        v.flush();
        out << "wrote " << n << " sectors at " << sector << '\n';
        return 0;
      }

      std::vector<std::uint8_t> plain;
      for (std::uint64_t i = 0; i < count; ++i) {
        const auto s = v.read_sector(sector + i);
        plain.insert(plain.end(), s.begin(), s.end());
      }
      if (data_path.empty()) {
        out << to_hex(plain) << '\n';
      } else {
        std::ofstream f(data_path, std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(plain.data()),
                static_cast<std::streamsize>(plain.size()));
        out << "read " << count << " sectors into " << data_path.string() << '\n';
      }
      return 0;
    }

    if (*arun) {
      const auto variant = parse_variant(variant_s);
      std::optional<aes::Block> chosen;
      if (!key_hex.empty()) chosen = aes::to_block(from_hex(key_hex));
      auto sc = coldboot::stage(variant, seed, ops, chosen);
      const auto probes = sc.truth.probes();
      const auto report = coldboot::attack(sc.machine, decay, tolerance, seed, probes);
      detail::print_attack(out, variant, report, sc.truth);
      if (variant == Variant::xornesia && sc.truth.wrapped_first) {
        // With a known volume key the stored XOR wrap gives the master away.
        aes::Block derived;
        for (std::size_t i = 0; i < derived.size(); ++i) {
          derived[i] = (*sc.truth.wrapped_first)[i] ^ sc.truth.round_keys[0][i];
        }
        out << "  wrapped_first xor rk0 = " << to_hex(derived)
            << (derived == sc.truth.master ? "  (master key)" : "") << '\n';
      }
      if (!report_path.empty()) {
        std::ofstream f(report_path, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + report_path.string());
        f << report.to_json().dump(2) << '\n';
      }
      if (!image_path.empty()) save_image(sc.machine.snapshot_ram(), image_path);
      return 0;
    }

    if (*bcpu) {
      std::vector<harness::BenchRow> rows;
      for (auto v : {Variant::amnesia, Variant::xornesia, Variant::plain}) {
        if (bench_variant == "all" || bench_variant == variant_name(v)) {
          rows.push_back(harness::bench_cpu(v, bench_ops, seed));
        }
      }
      harness::fill_ratios(rows);
      out << harness::format_table(rows);
      if (rows.size() == 3) {
        out << "amnesia/plain cpu ratio " << *rows[0].ratio_vs_plain << " (reference "
            << harness::ReferenceFigures::cpu_vs_aes << "x)\n";
      }
      if (!csv_path.empty()) harness::write_csv(rows, csv_path);
      return 0;
    }

    if (*bdev) {
      std::vector<harness::BenchRow> rows;
      for (auto w : {harness::Workload::seq_write, harness::Workload::seq_read,
                     harness::Workload::random_read}) {
        if (workload_s != "all" && workload_s != harness::workload_name(w)) continue;
        for (auto t : {harness::Target::amnesia, harness::Target::xornesia,
                       harness::Target::plain, harness::Target::naked}) {
          if (bench_variant != "all" && bench_variant != harness::target_name(t)) continue;
          rows.push_back(harness::bench_device(t, w, mb, seed, dir));
        }
      }
      harness::fill_ratios(rows);
      out << harness::format_table(rows);
      if (bench_variant == "all") {
        out << "reference slowdowns: vs plain " << harness::ReferenceFigures::device_vs_aes
            << "x, vs naked " << harness::ReferenceFigures::device_vs_naked << "x\n";
      }
      if (!csv_path.empty()) harness::write_csv(rows, csv_path);
      return 0;
    }

    if (*dcold) {
      for (auto v : {Variant::plain, Variant::amnesia}) {
        auto sc = coldboot::stage(v, seed, ops);
        const auto probes = sc.truth.probes();
        const auto report = coldboot::attack(sc.machine, 0.0005, 24, seed, probes);
        detail::print_attack(out, v, report, sc.truth);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_failure;
  }
  return exit_usage;
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), std::cout, std::cerr);
}

}  // namespace amnesia::cli

#endif  // AMNESIA_CLI_HPP
