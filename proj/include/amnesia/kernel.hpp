#ifndef AMNESIA_KERNEL_HPP
#define AMNESIA_KERNEL_HPP

#include <array>
#include <cstdint>
#include <utility>

#include "amnesia/aes_tables.hpp"
#include "amnesia/machine.hpp"

// AES-128 expressed as machine instructions, with no working storage in RAM.
//
// Register roles:
//   rax ecx r10 r11   cipher state entering a round (one column each)
//   rbx edx r14 r15   cipher state leaving a round
//   r8 r13 rdi rsi    scratch
//   r9 r12            current round key (r9 = w0|w1<<32, r12 = w2|w3<<32)
//   rbp               dispatch
//   rsp               never touched
//
// Each round reads one bank and writes the other, so after the ten rounds
// of a block operation the result is back in the entry bank.

namespace amnesia::kernel {

using Bank = std::array<Reg, 4>;

inline constexpr Bank bank_a = {Reg::rax, Reg::rcx, Reg::r10, Reg::r11};
inline constexpr Bank bank_b = {Reg::rbx, Reg::rdx, Reg::r14, Reg::r15};
inline constexpr std::array<Reg, 4> scratch = {Reg::r8, Reg::r13, Reg::rdi, Reg::rsi};
inline constexpr Reg key_lo = Reg::r9;
inline constexpr Reg key_hi = Reg::r12;
inline constexpr Reg dispatch = Reg::rbp;

inline constexpr RegSet bank_regs(const Bank& b) { return {b[0], b[1], b[2], b[3]}; }
inline constexpr RegSet scratch_regs = {Reg::r8, Reg::r13, Reg::rdi, Reg::rsi};
inline constexpr RegSet key_regs = {key_lo, key_hi};
/// Every register an engine may use: all but the stack pointer.
inline constexpr RegSet engine_regs = RegSet::all().without(Reg::rsp);

inline constexpr std::uint64_t low32 = 0xffffffffu;

enum class Direction { encrypt, decrypt };

/// How the round key in r9/r12 is applied in a middle decryption round.
enum class KeyForm {
  raw,            // XOR as is
  inverse_mixed,  // pass through InvMixColumns first (on-the-fly schedule)
};

/// Engine-only privileges on the machine.
struct Access {
  static DeclassifyToken issue(const Machine& m, int required_rounds) {
    return DeclassifyToken(&m, required_rounds);
  }
  static void note_round(Machine& m, DeclassifyToken* token) {
    ++m.round_calls_;
    if (token) ++token->rounds_;
  }
};

inline Reg key_reg(int column) { return column < 2 ? key_lo : key_hi; }

inline void load_state(Machine& m, const Bank& b, Address a) {
  for (int c = 0; c < 4; ++c) m.load(b[c], a + 4 * c, 4);
}

inline void store_state(Machine& m, const Bank& b, Address a) {
  for (int c = 0; c < 4; ++c) m.store(a + 4 * c, b[c], 4);
}

/// Splits the round key registers into four column words.
inline void unpack_key(Machine& m, const Bank& b) {
  for (int c = 0; c < 4; ++c) {
    m.mov(b[c], key_reg(c));
    if (c % 2)
      m.alu_imm(AluOp::shr, b[c], 32);
    else
      m.alu_imm(AluOp::and_, b[c], low32);
  }
}

/// Joins four column words into the round key registers.
inline void pack_key(Machine& m, const Bank& b) {
  m.mov(key_lo, b[1]);
  m.alu_imm(AluOp::shl, key_lo, 32);
  m.alu(AluOp::xor_, key_lo, b[0]);
  m.mov(key_hi, b[3]);
  m.alu_imm(AluOp::shl, key_hi, 32);
  m.alu(AluOp::xor_, key_hi, b[2]);
}

/// dst = InvMixColumns(word `half` of src). Clobbers r13.
inline void inv_mix_word(Machine& m, Reg dst, Reg src, int half) {
  constexpr std::array<Table, 4> td = {Table::td0, Table::td1, Table::td2, Table::td3};
  const Reg t = scratch[1];
  m.lookup(dst, src, Table::sbox, 4 * half);
  m.lookup(dst, dst, Table::td0, 0);
  for (int r = 1; r < 4; ++r) {
    m.lookup(t, src, Table::sbox, 4 * half + r);
    m.lookup(t, t, td[r], 0);
    m.alu(AluOp::xor_, dst, t);
  }
}

/// XORs the round key in r9/r12 into a state bank. Clobbers r8 (and r13
/// for the inverse-mixed form).
inline void add_round_key(Machine& m, const Bank& b, KeyForm form) {
  const Reg t = scratch[0];
  for (int c = 0; c < 4; ++c) {
    if (form == KeyForm::inverse_mixed) {
      inv_mix_word(m, t, key_reg(c), c % 2);
    } else {
      m.mov(t, key_reg(c));
      if (c % 2)
        m.alu_imm(AluOp::shr, t, 32);
      else
        m.alu_imm(AluOp::and_, t, low32);
    }
    m.alu(AluOp::xor_, b[c], t);
  }
}

/// One full cipher round from bank `in` to bank `out`, including the key
/// addition. `last` selects the round without (Inv)MixColumns.
inline void round(Machine& m, const Bank& in, const Bank& out, Direction dir,
                  bool last, KeyForm form, DeclassifyToken* token) {
  const Reg t = scratch[0];
  const bool enc = dir == Direction::encrypt;
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < 4; ++r) {
      // ShiftRows pulls row r from column c+r; InvShiftRows from c-r.
      const Reg src = in[(enc ? c + r : c + 4 - r) % 4];
      const Reg dst = r == 0 ? out[c] : t;
      if (last) {
        m.lookup(dst, src, enc ? Table::sbox : Table::inv_sbox, r);
        if (r) m.alu_imm(AluOp::shl, t, 8 * r);
      } else {
        const auto base = static_cast<int>(enc ? Table::te0 : Table::td0);
        m.lookup(dst, src, static_cast<Table>(base + r), r);
      }
      if (r) m.alu(AluOp::xor_, out[c], t);
    }
  }
  add_round_key(m, out, (enc || last) ? KeyForm::raw : form);
  Access::note_round(m, token);
}

/// r8 = SubWord(RotWord(w3)) ^ rcon[round], reading w3 from the top of r12.
/// Clobbers r13.
inline void schedule_core(Machine& m, int round) {
  const Reg acc = scratch[0];
  const Reg t = scratch[1];
  m.lookup(acc, key_hi, Table::sbox, 5);
  constexpr std::array<unsigned, 3> bytes = {6, 7, 4};
  for (int i = 0; i < 3; ++i) {
    m.lookup(t, key_hi, Table::sbox, bytes[i]);
    m.alu_imm(AluOp::shl, t, 8 * (i + 1));
    m.alu(AluOp::xor_, acc, t);
  }
  m.alu_imm(AluOp::xor_, acc, aes::tables::rcon[round]);
}

/// r9/r12: round key `round - 1` -> round key `round`.
inline void step_key(Machine& m, int round) {
  const Reg a = scratch[0];
  const Reg t = scratch[1];
  schedule_core(m, round);
  // Broadcast the core term to both halves: w0' = w0^T, w1' = w1^w0^T.
  m.mov(t, a);
  m.alu_imm(AluOp::shl, t, 32);
  m.alu(AluOp::xor_, a, t);
  m.mov(t, key_lo);
  m.alu_imm(AluOp::shl, t, 32);
  m.alu(AluOp::xor_, key_lo, t);
  m.alu(AluOp::xor_, key_lo, a);
  // w2' = w2^w1', w3' = w3^w2^w1'.
  m.mov(a, key_lo);
  m.alu_imm(AluOp::shr, a, 32);
  m.mov(t, a);
  m.alu_imm(AluOp::shl, t, 32);
  m.alu(AluOp::xor_, a, t);
  m.mov(t, key_hi);
  m.alu_imm(AluOp::shl, t, 32);
  m.alu(AluOp::xor_, key_hi, t);
  m.alu(AluOp::xor_, key_hi, a);
}

/// r9/r12: round key `round` -> round key `round - 1`.
inline void unstep_key(Machine& m, int round) {
  const Reg a = scratch[0];
  const Reg t = scratch[1];
  // w3 = w3'^w2', w2 = w2'^w1'
  m.mov(t, key_hi);
  m.alu_imm(AluOp::shl, t, 32);
  m.alu(AluOp::xor_, key_hi, t);
  m.mov(a, key_lo);
  m.alu_imm(AluOp::shr, a, 32);
  m.alu(AluOp::xor_, key_hi, a);
  // w1 = w1'^w0'
  m.mov(t, key_lo);
  m.alu_imm(AluOp::shl, t, 32);
  m.alu(AluOp::xor_, key_lo, t);
  // w0 = w0' ^ core(w3)
  schedule_core(m, round);
  m.alu(AluOp::xor_, key_lo, a);
}

/// Reads the four MSR slots into r9/r12 and zeroizes the staging registers.
inline void load_master(Machine& m) {
  const Reg a = scratch[0];
  const Reg b = scratch[1];
  for (int half = 0; half < 2; ++half) {
    const Reg k = half ? key_hi : key_lo;
    m.read_msr(2 * half, a);
    m.read_msr(2 * half + 1, b);
    m.alu_imm(AluOp::and_, a, low32);
    m.alu_imm(AluOp::shl, b, 32);
    m.mov(k, a);
    m.alu(AluOp::xor_, k, b);
  }
  m.zeroize_registers({a, b});
}

/// Master key as two 64-bit halves in r8 (slots 0,1) then, after the
/// callback, r8 again (slots 2,3). Used by the XOR wrap. Clobbers r13.
template <class F>
inline void with_master_halves(Machine& m, F&& per_half) {
  const Reg a = scratch[0];
  const Reg b = scratch[1];
  for (int half = 0; half < 2; ++half) {
    m.read_msr(2 * half, a);
    m.read_msr(2 * half + 1, b);
    m.alu_imm(AluOp::and_, a, low32);
    m.alu_imm(AluOp::shl, b, 32);
    m.alu(AluOp::xor_, a, b);
    per_half(half, a);
  }
  m.zeroize_registers({a, b});
}

inline void forward_to_last(Machine& m) {
  for (int r = 1; r <= 10; ++r) step_key(m, r);
}

/// Encrypts bank A in place. Expects round key 0 in r9/r12; leaves round
/// key 10 there.
inline void encrypt_regs(Machine& m, DeclassifyToken* token) {
  add_round_key(m, bank_a, KeyForm::raw);
  const Bank* in = &bank_a;
  const Bank* out = &bank_b;
  for (int r = 1; r <= 10; ++r) {
    step_key(m, r);
    round(m, *in, *out, Direction::encrypt, r == 10, KeyForm::raw, token);
    std::swap(in, out);
  }
}

/// Decrypts bank A in place. Expects round key 10 in r9/r12; leaves round
/// key 0 there.
inline void decrypt_regs(Machine& m, DeclassifyToken* token) {
  add_round_key(m, bank_a, KeyForm::raw);
  const Bank* in = &bank_a;
  const Bank* out = &bank_b;
  for (int r = 9; r >= 0; --r) {
    unstep_key(m, r + 1);
    round(m, *in, *out, Direction::decrypt, r == 0, KeyForm::inverse_mixed, token);
    std::swap(in, out);
  }
}

}  // namespace amnesia::kernel

#endif  // AMNESIA_KERNEL_HPP
