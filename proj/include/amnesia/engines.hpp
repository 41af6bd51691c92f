#ifndef AMNESIA_ENGINES_HPP
#define AMNESIA_ENGINES_HPP

#include <cstdint>
#include <stdexcept>

#include "amnesia/aes.hpp"
#include "amnesia/kernel.hpp"
#include "amnesia/keymaster.hpp"
#include "amnesia/machine.hpp"

// Per-block cipher engines over the simulated machine.
//
// All three compute the same AES-128 permutation. They differ in where the
// round keys come from: amnesia and xornesia unwrap the first (or last)
// round key into registers with interrupts off and derive the others on
// the fly; plain loads each round key from its RAM schedule.

namespace amnesia::engines {

namespace detail {

inline constexpr std::uint64_t dispatch_encrypt = 0xE1;
inline constexpr std::uint64_t dispatch_decrypt = 0xD1;

inline void require_variant(const AesContext& ctx, Variant v) {
  if (ctx.variant != v) {
    throw std::invalid_argument("context variant " + std::string(variant_name(ctx.variant)) +
                                " used with " + std::string(variant_name(v)) + " engine");
  }
}

inline aes::Block read_output(const Machine& m) {
  aes::Block out;
  m.read_ram_into(m.layout().io_out, out);
  return out;
}

/// Shared body of the amnesia and xornesia engines.
inline aes::Block wrapped_op(Machine& m, const AesContext& ctx, const aes::Block& in,
                             kernel::Direction dir) {
  if (!m.master_key_present()) throw MissingMasterKey();
  const bool enc = dir == kernel::Direction::encrypt;
  m.write_ram(m.layout().io_in, in);
  m.load_imm(kernel::dispatch, enc ? dispatch_encrypt : dispatch_decrypt);

  auto token = kernel::Access::issue(m, aes::num_rounds);
  {
    amnesia::detail::InterruptsOff cli(m);
    unwrap_in_registers(m, ctx, enc ? Which::first : Which::last);
    kernel::load_state(m, kernel::bank_a, m.layout().io_in);
    if (enc)
      kernel::encrypt_regs(m, &token);
    else
      kernel::decrypt_regs(m, &token);
    m.declassify(token, kernel::bank_regs(kernel::bank_a));
    m.zeroize_registers(kernel::bank_regs(kernel::bank_b) | kernel::scratch_regs |
                        kernel::key_regs);
  }
  kernel::store_state(m, kernel::bank_a, m.layout().io_out);
  return read_output(m);
}

inline void load_round_key(Machine& m, Address a) {
  m.load(kernel::key_lo, a, 8);
  m.load(kernel::key_hi, a + 8, 8);
}

}  // namespace detail

inline aes::Block amnesia_encrypt(Machine& m, const AesContext& ctx, const aes::Block& pt) {
  detail::require_variant(ctx, Variant::amnesia);
  return detail::wrapped_op(m, ctx, pt, kernel::Direction::encrypt);
}

inline aes::Block amnesia_decrypt(Machine& m, const AesContext& ctx, const aes::Block& ct) {
  detail::require_variant(ctx, Variant::amnesia);
  return detail::wrapped_op(m, ctx, ct, kernel::Direction::decrypt);
}

inline aes::Block xornesia_encrypt(Machine& m, const AesContext& ctx, const aes::Block& pt) {
  detail::require_variant(ctx, Variant::xornesia);
  return detail::wrapped_op(m, ctx, pt, kernel::Direction::encrypt);
}

inline aes::Block xornesia_decrypt(Machine& m, const AesContext& ctx, const aes::Block& ct) {
  detail::require_variant(ctx, Variant::xornesia);
  return detail::wrapped_op(m, ctx, ct, kernel::Direction::decrypt);
}

inline aes::Block plain_encrypt(Machine& m, const AesContext& ctx, const aes::Block& pt) {
  using namespace kernel;
  detail::require_variant(ctx, Variant::plain);
  m.write_ram(m.layout().io_in, pt);
  m.load_imm(dispatch, detail::dispatch_encrypt);
  load_state(m, bank_a, m.layout().io_in);
  detail::load_round_key(m, ctx.address);
  add_round_key(m, bank_a, KeyForm::raw);
  const Bank* in = &bank_a;
  const Bank* out = &bank_b;
  for (int r = 1; r <= aes::num_rounds; ++r) {
    detail::load_round_key(m, ctx.address + 16 * r);
    round(m, *in, *out, Direction::encrypt, r == aes::num_rounds, KeyForm::raw, nullptr);
    std::swap(in, out);
  }
  store_state(m, bank_a, m.layout().io_out);
  return detail::read_output(m);
}

inline aes::Block plain_decrypt(Machine& m, const AesContext& ctx, const aes::Block& ct) {
  using namespace kernel;
  detail::require_variant(ctx, Variant::plain);
  m.write_ram(m.layout().io_in, ct);
  m.load_imm(dispatch, detail::dispatch_decrypt);
  load_state(m, bank_a, m.layout().io_in);
  detail::load_round_key(m, ctx.address + 16 * aes::num_rounds);
  add_round_key(m, bank_a, KeyForm::raw);
  const Bank* in = &bank_a;
  const Bank* out = &bank_b;
  for (int r = aes::num_rounds - 1; r >= 0; --r) {
    const Address key = r == 0 ? ctx.address : ctx.address + plain_decrypt_offset + 16 * (9 - r);
    detail::load_round_key(m, key);
    round(m, *in, *out, Direction::decrypt, r == 0, KeyForm::raw, nullptr);
    std::swap(in, out);
  }
  store_state(m, bank_a, m.layout().io_out);
  return detail::read_output(m);
}

inline aes::Block encrypt(Machine& m, const AesContext& ctx, const aes::Block& pt) {
  switch (ctx.variant) {
    case Variant::amnesia: return amnesia_encrypt(m, ctx, pt);
    case Variant::xornesia: return xornesia_encrypt(m, ctx, pt);
    case Variant::plain: return plain_encrypt(m, ctx, pt);
  }
  throw std::invalid_argument("unknown variant");
}

inline aes::Block decrypt(Machine& m, const AesContext& ctx, const aes::Block& ct) {
  switch (ctx.variant) {
    case Variant::amnesia: return amnesia_decrypt(m, ctx, ct);
    case Variant::xornesia: return xornesia_decrypt(m, ctx, ct);
    case Variant::plain: return plain_decrypt(m, ctx, ct);
  }
  throw std::invalid_argument("unknown variant");
}

/// Instructions executed since the machine's counters were last reset.
inline std::uint64_t instruction_count(const Machine& m) { return m.instruction_count(); }

}  // namespace amnesia::engines

#endif  // AMNESIA_ENGINES_HPP
