#ifndef AMNESIA_MACHINE_HPP
#define AMNESIA_MACHINE_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amnesia/aes_tables.hpp"
#include "amnesia/memory_image.hpp"
#include "amnesia/util.hpp"

// A minimal x86-64-flavoured machine with per-register taint.
//
// Taint marks data derived from key material. Registers become tainted by
// reading an MSR or ingesting key input; every instruction propagates taint
// from sources to destination. RAM carries no taint: storing a tainted
// register is itself the violation. Only zeroize_registers() and
// declassify() remove taint.

namespace amnesia {

enum class Reg : std::uint8_t {
  rax, rcx, rdx, rbx, rsp, rbp, rsi, rdi,
  r8, r9, r10, r11, r12, r13, r14, r15,
};

inline constexpr std::size_t num_registers = 16;

inline constexpr std::string_view reg_name(Reg r) {
  constexpr std::array<std::string_view, num_registers> names = {
      "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
      "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15"};
  return names[static_cast<std::size_t>(r)];
}

class RegSet {
 public:
  constexpr RegSet() = default;
  constexpr RegSet(std::initializer_list<Reg> regs) {
    for (auto r : regs) insert(r);
  }
  static constexpr RegSet from_mask(std::uint16_t m) {
    RegSet s;
    s.bits_ = m;
    return s;
  }
  static constexpr RegSet all() { return from_mask(0xffff); }

  constexpr void insert(Reg r) { bits_ |= bit(r); }
  constexpr bool contains(Reg r) const { return bits_ & bit(r); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint16_t mask() const { return bits_; }
  constexpr RegSet operator|(RegSet o) const { return from_mask(bits_ | o.bits_); }
  constexpr RegSet without(Reg r) const { return from_mask(bits_ & ~bit(r)); }

  template <class F>
  constexpr void for_each(F&& f) const {
    for (std::size_t i = 0; i < num_registers; ++i)
      if (bits_ & (1u << i)) f(static_cast<Reg>(i));
  }

  friend constexpr bool operator==(RegSet, RegSet) = default;

 private:
  static constexpr std::uint16_t bit(Reg r) {
    return static_cast<std::uint16_t>(1u << static_cast<unsigned>(r));
  }
  std::uint16_t bits_ = 0;
};

/// Constant tables addressable by the lookup instruction.
enum class Table : std::uint8_t {
  sbox, inv_sbox, te0, te1, te2, te3, td0, td1, td2, td3,
};

inline const aes::tables::Table& table_data(Table t) {
  namespace tb = aes::tables;
  static const std::array<const tb::Table*, 10> all = {
      &tb::sbox,  &tb::inv_sbox, &tb::te[0], &tb::te[1], &tb::te[2],
      &tb::te[3], &tb::td[0],    &tb::td[1], &tb::td[2], &tb::td[3]};
  return *all[static_cast<std::size_t>(t)];
}

enum class AluOp : std::uint8_t { xor_, and_, or_, add, shl, shr };

using Address = std::uint64_t;

struct Instruction {
  enum class Op : std::uint8_t { load_imm, mov, alu, alu_imm, lookup, load, store };

  Op op = Op::load_imm;
  Reg dst = Reg::rax;
  Reg src = Reg::rax;
  AluOp alu = AluOp::xor_;
  Table table = Table::sbox;
  std::uint8_t byte = 0;   // lookup: which byte of src indexes the table
  std::uint8_t width = 8;  // load/store width in bytes
  std::uint64_t imm = 0;   // immediate value, shift count, or address

  static Instruction load_imm(Reg d, std::uint64_t v) {
    return {Op::load_imm, d, d, {}, {}, 0, 8, v};
  }
  static Instruction mov(Reg d, Reg s) { return {Op::mov, d, s}; }
  static Instruction alu_reg(AluOp o, Reg d, Reg s) { return {Op::alu, d, s, o}; }
  static Instruction alu_imm(AluOp o, Reg d, std::uint64_t v) {
    return {Op::alu_imm, d, d, o, {}, 0, 8, v};
  }
  static Instruction lookup(Reg d, Reg s, Table t, unsigned b) {
    return {Op::lookup, d, s, {}, t, static_cast<std::uint8_t>(b)};
  }
  static Instruction load(Reg d, Address a, unsigned w) {
    return {Op::load, d, d, {}, {}, 0, static_cast<std::uint8_t>(w), a};
  }
  static Instruction store(Address a, Reg s, unsigned w) {
    return {Op::store, s, s, {}, {}, 0, static_cast<std::uint8_t>(w), a};
  }
};

enum class Mode : std::uint8_t {
  enforcing,  // storing a tainted register throws TaintSpill
  audit,      // the store happens and a Violation is logged
};

enum class InterruptKind : std::uint8_t { maskable, nmi };
enum class Privilege : std::uint8_t { kernel, user };

struct Violation {
  enum class Source : std::uint8_t { store, interrupt_dump };
  Source source = Source::store;
  Reg reg = Reg::rax;
  Address address = 0;
  std::uint64_t value = 0;
  std::uint64_t instruction = 0;
};

class TaintSpill : public std::runtime_error {
 public:
  explicit TaintSpill(const Violation& v)
      : std::runtime_error("tainted register " + std::string(reg_name(v.reg)) +
                           " stored to RAM"),
        violation(v) {}
  Violation violation;
};

class PrivilegeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class PolicyViolation : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class MachineHalted : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Fixed RAM addresses used by key input and block I/O.
struct RamLayout {
  Address interrupt_dump = 0x100;  // 16 registers x 8 bytes
  Address key_input = 0x200;
  Address io_in = 0x300;
  Address io_out = 0x340;
  Address heap = 0x1000;
};

inline constexpr std::size_t interrupt_dump_size = num_registers * 8;
inline constexpr std::size_t msr_slots = 4;

struct MachineConfig {
  std::size_t ram_size = std::size_t{1} << 20;
  Mode mode = Mode::enforcing;
  unsigned msr_significant_bits = 32;
  bool msr_user_read_enabled = false;
  bool nmi_scrub_handler = false;
  RamLayout layout{};

  std::string describe() const {
    return "ram=" + std::to_string(ram_size) +
           ";mode=" + (mode == Mode::enforcing ? "enforcing" : "audit") +
           ";msr_bits=" + std::to_string(msr_significant_bits) +
           ";msr_user_read=" + std::to_string(msr_user_read_enabled) +
           ";nmi_scrub=" + std::to_string(nmi_scrub_handler) +
           ";dump=" + std::to_string(layout.interrupt_dump) +
           ";heap=" + std::to_string(layout.heap);
  }
  std::string digest() const { return to_hex(sha256(describe())); }
};

class Machine;

namespace kernel {
struct Access;
}

/// Permission to clear taint on a cipher's output registers.
///
/// Issued per operation to engine code. It becomes usable once the number
/// of payload rounds it has observed reaches the count fixed at issue, and
/// it is spent by the first successful declassify().
class DeclassifyToken {
 public:
  int rounds_observed() const { return rounds_; }
  int rounds_required() const { return required_; }
  bool consumed() const { return consumed_; }

 private:
  friend class Machine;
  friend struct kernel::Access;
  DeclassifyToken(const Machine* issuer, int required)
      : issuer_(issuer), required_(required) {}

  const Machine* issuer_;
  int required_;
  int rounds_ = 0;
  bool consumed_ = false;
};

struct StoreEvent {
  Address address;
  unsigned width;
  Reg reg;
  bool tainted;
  std::uint64_t instruction;
};

class Machine {
 public:
  using BoundaryHook = std::function<void(Machine&)>;
  using StoreObserver = std::function<void(const StoreEvent&)>;

  explicit Machine(MachineConfig cfg = {})
      : cfg_(cfg), ram_(cfg.ram_size, 0), digest_(cfg.digest()) {
    const auto& l = cfg_.layout;
    if (cfg_.msr_significant_bits < 32 || cfg_.msr_significant_bits > 64) {
      throw std::invalid_argument("MSR slots need 32..64 significant bits");
    }
    if (l.heap >= cfg_.ram_size ||
        l.interrupt_dump + interrupt_dump_size > cfg_.ram_size) {
      throw std::invalid_argument("RAM too small for layout");
    }
    msr_mask_ = cfg_.msr_significant_bits == 64
                    ? ~std::uint64_t{0}
                    : (std::uint64_t{1} << cfg_.msr_significant_bits) - 1;
    heap_top_ = l.heap;
  }

  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;
  Machine(Machine&&) = default;
  Machine& operator=(Machine&&) = default;

  const MachineConfig& config() const { return cfg_; }
  const RamLayout& layout() const { return cfg_.layout; }
  Mode mode() const { return cfg_.mode; }

  // ---- instructions --------------------------------------------------

  void execute(const Instruction& in) {
    using Op = Instruction::Op;
    switch (in.op) {
      case Op::load_imm: return load_imm(in.dst, in.imm);
      case Op::mov: return mov(in.dst, in.src);
      case Op::alu: return alu(in.alu, in.dst, in.src);
      case Op::alu_imm: return alu_imm(in.alu, in.dst, in.imm);
      case Op::lookup: return lookup(in.dst, in.src, in.table, in.byte);
      case Op::load: return load(in.dst, in.imm, in.width);
      case Op::store: return store(in.imm, in.src, in.width);
    }
    throw std::invalid_argument("execute: unknown opcode");
  }

  void load_imm(Reg d, std::uint64_t v) {
    boundary();
    set(d, v, false);
  }

  void mov(Reg d, Reg s) {
    boundary();
    set(d, regs_[idx(s)], tainted(s));
  }

  void alu(AluOp op, Reg d, Reg s) {
    boundary();
    set(d, apply(op, regs_[idx(d)], regs_[idx(s)]), tainted(d) || tainted(s));
  }

  void alu_imm(AluOp op, Reg d, std::uint64_t v) {
    boundary();
    set(d, apply(op, regs_[idx(d)], v), tainted(d));
  }

  /// dst = table[byte `b` of src]; dst inherits src's taint.
  void lookup(Reg d, Reg s, Table t, unsigned b) {
    boundary();
    const auto index = (regs_[idx(s)] >> (8 * (b & 7))) & 0xff;
    set(d, table_data(t)[index], tainted(s));
  }

  /// Little-endian load of 1..8 bytes. RAM never yields taint.
  void load(Reg d, Address a, unsigned width) {
    boundary();
    check_range(a, width);
    std::uint64_t v = 0;
    for (unsigned i = width; i-- > 0;) v = (v << 8) | ram_[a + i];
    set(d, v, false);
  }

  void store(Address a, Reg s, unsigned width) {
    boundary();
    check_range(a, width);
    const bool t = tainted(s);
    if (t) {
      Violation v{Violation::Source::store, s, a, regs_[idx(s)], instructions_};
      if (cfg_.mode == Mode::enforcing) throw TaintSpill(v);
      violations_.push_back(v);
    }
    write_bytes(a, regs_[idx(s)], width);
    if (store_observer_) store_observer_({a, width, s, t, instructions_});
  }

  // ---- MSRs ----------------------------------------------------------

  void read_msr(unsigned slot, Reg d, Privilege priv = Privilege::kernel) {
    check_slot(slot);
    if (priv == Privilege::user && !cfg_.msr_user_read_enabled) {
      throw PrivilegeError("unprivileged MSR read is disabled");
    }
    boundary();
    set(d, msr_[slot], true);
  }

  void write_msr(unsigned slot, Reg s) {
    check_slot(slot);
    boundary();
    msr_[slot] = regs_[idx(s)] & msr_mask_;
    msr_written_ |= 1u << slot;
  }

  bool master_key_present() const { return msr_written_ == 0xf; }

  // ---- key ingress ---------------------------------------------------
  // The two ways secret material enters the register file besides MSRs.

  /// Loads key bytes handed in through RAM (the user-supplied volume key).
  void load_key_input(Reg d, Address a, unsigned width) {
    load(d, a, width);
    taint_ |= bit(d);
  }

  /// Loads a secret immediate, e.g. fresh RNG output.
  void load_secret(Reg d, std::uint64_t v) {
    boundary();
    set(d, v, true);
  }

  // ---- interrupts ----------------------------------------------------

  void set_interrupts(bool enabled) {
    boundary();
    interrupts_enabled_ = enabled;
  }

  bool interrupts_enabled() const { return interrupts_enabled_; }

  /// Maskable interrupts are dropped while disabled. Otherwise every
  /// register is pushed to the interrupt dump region; tainted ones are
  /// logged as violations regardless of mode, since the hardware cannot
  /// refuse the push.
  void inject_interrupt(InterruptKind kind) {
    if (kind == InterruptKind::maskable && !interrupts_enabled_) {
      ++dropped_interrupts_;
      return;
    }
    if (kind == InterruptKind::nmi && cfg_.nmi_scrub_handler) {
      regs_.fill(0);
      taint_ = 0;
      halted_ = true;
    }
    const auto base = cfg_.layout.interrupt_dump;
    for (std::size_t i = 0; i < num_registers; ++i) {
      const auto r = static_cast<Reg>(i);
      const Address a = base + 8 * i;
      if (tainted(r)) {
        violations_.push_back({Violation::Source::interrupt_dump, r, a,
                               regs_[i], instructions_});
      }
      write_bytes(a, regs_[i], 8);
    }
    ++taken_interrupts_;
  }

  bool halted() const { return halted_; }

  // ---- taint control -------------------------------------------------

  void zeroize_registers(RegSet rs) {
    rs.for_each([this](Reg r) {
      boundary();
      regs_[idx(r)] = 0;
      taint_ &= static_cast<std::uint16_t>(~bit(r));
      written_ |= bit(r);
    });
  }

  void declassify(DeclassifyToken& token, RegSet rs) {
    if (token.issuer_ != this) throw PolicyViolation("token issued by another machine");
    if (token.consumed_) throw PolicyViolation("declassify token already spent");
    if (token.rounds_ != token.required_) {
      throw PolicyViolation("declassify before the cipher completed: " +
                            std::to_string(token.rounds_) + " of " +
                            std::to_string(token.required_) + " rounds");
    }
    token.consumed_ = true;
    taint_ &= static_cast<std::uint16_t>(~rs.mask());
  }

  // ---- inspection ----------------------------------------------------

  std::uint64_t reg(Reg r) const { return regs_[idx(r)]; }
  bool tainted(Reg r) const { return taint_ & bit(r); }
  RegSet tainted_registers() const { return RegSet::from_mask(taint_); }
  RegSet written_registers() const { return RegSet::from_mask(written_); }

  const std::vector<Violation>& violations() const { return violations_; }

  std::uint64_t instruction_count() const { return instructions_; }
  std::uint64_t round_calls() const { return round_calls_; }
  std::uint64_t taken_interrupts() const { return taken_interrupts_; }
  std::uint64_t dropped_interrupts() const { return dropped_interrupts_; }

  /// Resets the cost counters and the written-register record.
  void reset_counters() {
    instructions_ = 0;
    round_calls_ = 0;
    written_ = 0;
  }

  MemoryImage snapshot_ram() const {
    return {ram_, {ram_.size(), digest_, instructions_}};
  }

  std::span<const std::uint8_t> ram() const { return ram_; }

  /// Bus-master access to RAM (block I/O buffers, test setup). Carries no
  /// taint and is not an instruction.
  void write_ram(Address a, std::span<const std::uint8_t> bytes) {
    check_range(a, bytes.size());
    std::copy(bytes.begin(), bytes.end(), ram_.begin() + static_cast<std::ptrdiff_t>(a));
  }

  void read_ram_into(Address a, std::span<std::uint8_t> out) const {
    check_range(a, out.size());
    std::copy_n(ram_.begin() + static_cast<std::ptrdiff_t>(a), out.size(), out.begin());
  }

  std::vector<std::uint8_t> read_ram(Address a, std::size_t n) const {
    check_range(a, n);
    return {ram_.begin() + static_cast<std::ptrdiff_t>(a),
            ram_.begin() + static_cast<std::ptrdiff_t>(a + n)};
  }

  void set_boundary_hook(BoundaryHook h) { hook_ = std::move(h); }
  void set_store_observer(StoreObserver o) { store_observer_ = std::move(o); }

  // ---- heap ----------------------------------------------------------

  Address allocate(std::size_t n) {
    if (auto it = free_.find(n); it != free_.end() && !it->second.empty()) {
      const auto a = it->second.back();
      it->second.pop_back();
      return a;
    }
    if (heap_top_ + n > ram_.size()) throw std::bad_alloc();
    const auto a = heap_top_;
    heap_top_ += n;
    return a;
  }

  /// Zero-fills and returns a block obtained from allocate().
  void release(Address a, std::size_t n) {
    check_range(a, n);
    std::fill_n(ram_.begin() + static_cast<std::ptrdiff_t>(a), n, 0);
    free_[n].push_back(a);
  }

 private:
  friend struct kernel::Access;

  static constexpr std::size_t idx(Reg r) { return static_cast<std::size_t>(r); }
  static constexpr std::uint16_t bit(Reg r) {
    return static_cast<std::uint16_t>(1u << static_cast<unsigned>(r));
  }

  static std::uint64_t apply(AluOp op, std::uint64_t a, std::uint64_t b) {
    switch (op) {
      case AluOp::xor_: return a ^ b;
      case AluOp::and_: return a & b;
      case AluOp::or_: return a | b;
      case AluOp::add: return a + b;
      case AluOp::shl: return b >= 64 ? 0 : a << b;
      case AluOp::shr: return b >= 64 ? 0 : a >> b;
    }
    return 0;
  }

  void boundary() {
    if (hook_) hook_(*this);
    if (halted_) throw MachineHalted("machine halted after NMI");
    ++instructions_;
  }

  void set(Reg d, std::uint64_t v, bool t) {
    regs_[idx(d)] = v;
    if (t)
      taint_ |= bit(d);
    else
      taint_ &= static_cast<std::uint16_t>(~bit(d));
    written_ |= bit(d);
  }

  void check_range(Address a, std::size_t n) const {
    if (a > ram_.size() || n > ram_.size() - a) {
      throw std::out_of_range("RAM access out of range at " + std::to_string(a));
    }
  }

  static void check_slot(unsigned slot) {
    if (slot >= msr_slots) throw std::out_of_range("MSR slot must be 0..3");
  }

  void write_bytes(Address a, std::uint64_t v, unsigned width) {
    for (unsigned i = 0; i < width; ++i) ram_[a + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

  MachineConfig cfg_;
  std::array<std::uint64_t, num_registers> regs_{};
  std::uint16_t taint_ = 0;
  std::uint16_t written_ = 0;
  std::array<std::uint64_t, msr_slots> msr_{};
  unsigned msr_written_ = 0;
  std::uint64_t msr_mask_ = 0;
  std::vector<std::uint8_t> ram_;
  std::string digest_;
  bool interrupts_enabled_ = true;
  bool halted_ = false;
  std::vector<Violation> violations_;
  std::uint64_t instructions_ = 0;
  std::uint64_t round_calls_ = 0;
  std::uint64_t taken_interrupts_ = 0;
  std::uint64_t dropped_interrupts_ = 0;
  BoundaryHook hook_;
  StoreObserver store_observer_;
  Address heap_top_ = 0;
  std::map<std::size_t, std::vector<Address>> free_;
};

}  // namespace amnesia

#endif  // AMNESIA_MACHINE_HPP
