#ifndef AMNESIA_KEYMASTER_HPP
#define AMNESIA_KEYMASTER_HPP

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amnesia/aes.hpp"
#include "amnesia/kernel.hpp"
#include "amnesia/machine.hpp"
#include "amnesia/util.hpp"

namespace amnesia {

/// How a volume's round keys are kept in RAM.
enum class Variant : std::uint8_t {
  amnesia,   // first and last round keys, each AES-encrypted under the master key
  xornesia,  // first and last round keys, each XORed with the master key
  plain,     // the full precomputed schedule in the clear
};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::amnesia: return "amnesia";
    case Variant::xornesia: return "xornesia";
    case Variant::plain: return "plain";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "amnesia") return Variant::amnesia;
  if (s == "xornesia") return Variant::xornesia;
  if (s == "plain") return Variant::plain;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

class MissingMasterKey : public std::runtime_error {
 public:
  MissingMasterKey() : std::runtime_error("no master key provisioned in MSRs") {}
};

/// Hash-chain generator with backtracking resistance.
///
///   out_n       = SHA-256(state_n || "out"  || n)[0..16)
///   state_{n+1} = SHA-256(state_n || "step")
///
/// The preimage of each output is dropped once the state advances.
class Rng {
 public:
  Rng() = default;

  explicit Rng(std::span<const std::uint8_t> seed) : state_(sha256(seed)), seeded_(true) {}

  static Rng from_seed(std::uint64_t seed) {
    std::array<std::uint8_t, 8> b{};
    store_le64(b.data(), seed);
    return Rng(b);
  }

  bool seeded() const { return seeded_; }
  std::uint64_t counter() const { return counter_; }
  const Digest& state() const { return state_; }

  aes::Block next_block() {
    if (!seeded_) throw std::logic_error("Rng used before seeding");
    std::array<std::uint8_t, 32 + 3 + 8> in{};
    std::copy(state_.begin(), state_.end(), in.begin());
    in[32] = 'o';
    in[33] = 'u';
    in[34] = 't';
    store_le64(&in[35], counter_);
    const auto full = sha256(in);
    aes::Block out;
    std::copy_n(full.begin(), out.size(), out.begin());

    std::array<std::uint8_t, 32 + 4> step{};
    std::copy(state_.begin(), state_.end(), step.begin());
    step[32] = 's';
    step[33] = 't';
    step[34] = 'e';
    step[35] = 'p';
    state_ = sha256(step);
    ++counter_;

    secure_zero(in);
    secure_zero(step);
    return out;
  }

 private:
  Digest state_{};
  std::uint64_t counter_ = 0;
  bool seeded_ = false;
};

/// Handle to a volume's key material in simulated RAM.
///
/// Layout at `address`:
///   amnesia/xornesia: wrapped rk0 (16) | wrapped rk10 (16)
///   plain:            rk0..rk10 (176) | InvMixColumns(rk9..rk1) (144)
struct AesContext {
  Variant variant = Variant::amnesia;
  Address address = 0;
  std::size_t size = 0;
};

inline constexpr std::size_t wrapped_context_size = 32;
inline constexpr std::size_t plain_context_size = 20 * aes::block_size;
inline constexpr std::size_t plain_decrypt_offset = aes::schedule_length * aes::block_size;

inline std::size_t context_size(Variant v) {
  return v == Variant::plain ? plain_context_size : wrapped_context_size;
}

enum class Which { first, last };

namespace detail {

inline aes::Block read_block(const Machine& m, Address a) {
  return aes::to_block(m.read_ram(a, aes::block_size));
}

inline void require_wrapped(const AesContext& ctx) {
  if (ctx.variant == Variant::plain) {
    throw std::invalid_argument("plain contexts hold no wrapped keys");
  }
}

/// Restores the interrupt flag on scope exit when it was enabled on entry.
class InterruptsOff {
 public:
  explicit InterruptsOff(Machine& m) : m_(m), was_enabled_(m.interrupts_enabled()) {
    m_.set_interrupts(false);
  }
  ~InterruptsOff() {
    if (was_enabled_ && !m_.halted()) m_.set_interrupts(true);
  }
  InterruptsOff(const InterruptsOff&) = delete;
  InterruptsOff& operator=(const InterruptsOff&) = delete;

 private:
  Machine& m_;
  bool was_enabled_;
};

inline void load_volume_key(Machine& m) {
  const auto in = m.layout().key_input;
  m.load_key_input(kernel::key_lo, in, 8);
  m.load_key_input(kernel::key_hi, in + 8, 8);
}

inline void clear_key_input(Machine& m) {
  const auto in = m.layout().key_input;
  const Reg z = kernel::scratch[2];
  m.load_imm(z, 0);
  m.store(in, z, 8);
  m.store(in + 8, z, 8);
}

// Round key in r9/r12 -> E_master(round key) stored at `dst`.
inline void aes_wrap_to(Machine& m, Address dst) {
  auto token = kernel::Access::issue(m, aes::num_rounds);
  kernel::unpack_key(m, kernel::bank_a);
  kernel::load_master(m);
  kernel::encrypt_regs(m, &token);
  m.declassify(token, kernel::bank_regs(kernel::bank_a));
  kernel::store_state(m, kernel::bank_a, dst);
}

// Round key in r9/r12 -> (round key ^ master) stored at `dst`.
inline void xor_wrap_to(Machine& m, Address dst) {
  kernel::with_master_halves(m, [&](int half, Reg master) {
    m.alu(AluOp::xor_, half ? kernel::key_hi : kernel::key_lo, master);
  });
  // The XOR wrap is complete without any cipher rounds.
  auto token = kernel::Access::issue(m, 0);
  m.declassify(token, kernel::key_regs);
  m.store(dst, kernel::key_lo, 8);
  m.store(dst + 8, kernel::key_hi, 8);
}

}  // namespace detail

inline aes::Block wrapped_first(const Machine& m, const AesContext& ctx) {
  detail::require_wrapped(ctx);
  return detail::read_block(m, ctx.address);
}

inline aes::Block wrapped_last(const Machine& m, const AesContext& ctx) {
  detail::require_wrapped(ctx);
  return detail::read_block(m, ctx.address + aes::block_size);
}

/// The 20 round-key quantities a plain context keeps in RAM.
inline std::vector<aes::Block> plain_schedule(const Machine& m, const AesContext& ctx) {
  if (ctx.variant != Variant::plain) {
    throw std::invalid_argument("only plain contexts hold a schedule");
  }
  std::vector<aes::Block> out;
  for (std::size_t i = 0; i < 20; ++i) {
    out.push_back(detail::read_block(m, ctx.address + i * aes::block_size));
  }
  return out;
}

/// Draws a fresh 128-bit key and writes it to the four MSR slots through
/// registers. Replaces any key already there.
inline void generate_master_key(Machine& m, Rng& rng) {
  auto key = rng.next_block();
  std::array<std::uint64_t, 2> halves = {load_le64(key.data()), load_le64(key.data() + 8)};
  secure_zero(key);

  const Reg a = kernel::scratch[0];
  const Reg b = kernel::scratch[1];
  {
    detail::InterruptsOff cli(m);
    for (int half = 0; half < 2; ++half) {
      m.load_secret(a, halves[half]);
      m.write_msr(2 * half, a);
      m.mov(b, a);
      m.alu_imm(AluOp::shr, b, 32);
      m.write_msr(2 * half + 1, b);
    }
    m.zeroize_registers({a, b});
  }
  secure_zero(std::span(reinterpret_cast<std::uint8_t*>(halves.data()), sizeof halves));
}

/// Builds a context for `volume_key`.
///
/// The key is handed in through the machine's key-input buffer, which is
/// cleared before return. For the wrapped variants a missing master key is
/// generated from `rng`; pass nullptr to forbid generation.
inline AesContext set_key(Machine& m, std::span<const std::uint8_t> volume_key,
                          Variant variant, Rng* rng) {
  if (volume_key.size() != aes::key_size) {
    throw std::invalid_argument("volume key must be 16 bytes");
  }
  if (variant != Variant::plain && !m.master_key_present()) {
    if (!rng) throw MissingMasterKey();
    generate_master_key(m, *rng);
  }

  const AesContext ctx{variant, m.allocate(context_size(variant)), context_size(variant)};
  m.write_ram(m.layout().key_input, volume_key);

  try {
    if (variant == Variant::plain) {
      // The conventional layout: every round key precomputed into RAM.
      detail::load_volume_key(m);
      for (int r = 0; r <= aes::num_rounds; ++r) {
        if (r) kernel::step_key(m, r);
        m.store(ctx.address + 16 * r, kernel::key_lo, 8);
        m.store(ctx.address + 16 * r + 8, kernel::key_hi, 8);
      }
      const Reg w = kernel::scratch[2];
      for (int r = aes::num_rounds - 1; r >= 1; --r) {
        kernel::unstep_key(m, r + 1);
        const Address dst = ctx.address + plain_decrypt_offset + 16 * (9 - r);
        for (int c = 0; c < 4; ++c) {
          kernel::inv_mix_word(m, w, kernel::key_reg(c), c % 2);
          m.store(dst + 4 * c, w, 4);
        }
      }
      detail::clear_key_input(m);
      m.zeroize_registers(kernel::engine_regs);
      return ctx;
    }

    detail::InterruptsOff cli(m);
    for (Which which : {Which::first, Which::last}) {
      detail::load_volume_key(m);
      if (which == Which::last) kernel::forward_to_last(m);
      const Address dst = ctx.address + (which == Which::first ? 0 : aes::block_size);
      if (variant == Variant::amnesia)
        detail::aes_wrap_to(m, dst);
      else
        detail::xor_wrap_to(m, dst);
    }
    detail::clear_key_input(m);
    m.zeroize_registers(kernel::engine_regs);
  } catch (...) {
    const std::array<std::uint8_t, aes::key_size> zeros{};
    m.write_ram(m.layout().key_input, zeros);
    throw;
  }
  return ctx;
}

/// Zero-fills a context's RAM and returns it to the machine heap.
inline void release_key(Machine& m, const AesContext& ctx) {
  m.release(ctx.address, ctx.size);
}

/// Decrypts the chosen wrapped round key into r9/r12.
///
/// The result is tainted and lives only in registers. Requires interrupts
/// to be disabled; everything used along the way except r9/r12 is
/// zeroized before return.
inline std::array<Reg, 2> unwrap_in_registers(Machine& m, const AesContext& ctx, Which which) {
  detail::require_wrapped(ctx);
  if (!m.master_key_present()) throw MissingMasterKey();
  if (m.interrupts_enabled()) {
    throw PolicyViolation("unwrap_in_registers requires interrupts disabled");
  }
  const Address src = ctx.address + (which == Which::first ? 0 : aes::block_size);

  if (ctx.variant == Variant::amnesia) {
    kernel::load_master(m);
    kernel::forward_to_last(m);
    kernel::load_state(m, kernel::bank_a, src);
    kernel::decrypt_regs(m, nullptr);
    kernel::pack_key(m, kernel::bank_a);
    m.zeroize_registers(kernel::bank_regs(kernel::bank_a) |
                        kernel::bank_regs(kernel::bank_b) | kernel::scratch_regs);
  } else {
    m.load(kernel::key_lo, src, 8);
    m.load(kernel::key_hi, src + 8, 8);
    kernel::with_master_halves(m, [&](int half, Reg master) {
      m.alu(AluOp::xor_, half ? kernel::key_hi : kernel::key_lo, master);
    });
  }
  return {kernel::key_lo, kernel::key_hi};
}

}  // namespace amnesia

#endif  // AMNESIA_KEYMASTER_HPP
