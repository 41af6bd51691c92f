#include <gtest/gtest.h>

#include <random>
#include <set>

#include "amnesia/aes.hpp"
#include "amnesia/coldboot.hpp"
#include "amnesia/kernel.hpp"
#include "amnesia/keymaster.hpp"
#include "support/common.hpp"
#include "support/reference_aes.hpp"

using namespace amnesia;
using testing_support::contains;
using testing_support::random_block;

namespace {

// The master key a fresh machine gets from Rng::from_seed(seed).
aes::Block replay_master(std::uint64_t seed) { return Rng::from_seed(seed).next_block(); }

aes::Block msr_readback(Machine& m) {
  aes::Block out{};
  for (unsigned slot = 0; slot < 4; ++slot) {
    m.read_msr(slot, Reg::rax);
    const auto v = m.reg(Reg::rax);
    for (int i = 0; i < 4; ++i) out[4 * slot + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  m.zeroize_registers({Reg::rax});
  return out;
}

}  // namespace

TEST(Rng, DeterministicPerSeed) {
  auto a = Rng::from_seed(7);
  auto b = Rng::from_seed(7);
  auto c = Rng::from_seed(8);
  for (int i = 0; i < 20; ++i) {
    const auto x = a.next_block();
    EXPECT_EQ(x, b.next_block());
    EXPECT_NE(x, c.next_block());
  }
}

TEST(Rng, TenThousandDistinctOutputs) {
  auto r = Rng::from_seed(1);
  std::set<aes::Block> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(r.next_block());
  EXPECT_EQ(seen.size(), 10000u);
}

TEST(Rng, StateAdvancesAndHoldsNoOutput) {
  auto r = Rng::from_seed(2);
  for (int i = 0; i < 100; ++i) {
    const auto before = r.state();
    const auto out = r.next_block();
    EXPECT_NE(r.state(), before);
    EXPECT_FALSE(contains(r.state(), out));
    EXPECT_EQ(r.counter(), static_cast<std::uint64_t>(i + 1));
  }
}

TEST(Rng, UnseededThrows) {
  Rng r;
  EXPECT_THROW(r.next_block(), std::logic_error);
}

TEST(MasterKey, MsrReadbackMatchesAndRamStaysClean) {
  Machine m;
  auto rng = Rng::from_seed(3);
  generate_master_key(m, rng);
  const auto expected = replay_master(3);
  EXPECT_TRUE(m.master_key_present());
  EXPECT_FALSE(contains(m.ram(), expected));
  EXPECT_FALSE(contains(m.ram(), std::span(expected).first(4)));
  EXPECT_TRUE(m.tainted_registers().empty());
  EXPECT_EQ(msr_readback(m), expected);
}

TEST(MasterKey, TwoCallsGiveDifferentKeys) {
  Machine m;
  auto rng = Rng::from_seed(4);
  generate_master_key(m, rng);
  const auto first = msr_readback(m);
  generate_master_key(m, rng);
  EXPECT_NE(msr_readback(m), first);
}

TEST(SetKey, AmnesiaStoresOnlyWrappedForms) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    Machine m;
    auto rng = Rng::from_seed(100 + trial);
    const auto master = replay_master(100 + trial);
    const auto key = random_block(gen);
    const auto ctx = set_key(m, key, Variant::amnesia, &rng);
    const auto s = aes::expand_key(key);

    EXPECT_EQ(ctx.size, wrapped_context_size);
    EXPECT_EQ(wrapped_first(m, ctx), reference::encrypt(master, s[0].bytes));
    EXPECT_EQ(wrapped_last(m, ctx), reference::encrypt(master, s[10].bytes));
    EXPECT_FALSE(contains(m.ram(), master));
    for (const auto& rk : s) EXPECT_FALSE(contains(m.ram(), rk.bytes));
    EXPECT_TRUE(m.violations().empty());
    EXPECT_TRUE(m.tainted_registers().empty());
  }
}

TEST(SetKey, XornesiaIsKeyXorMaster) {
  Machine m;
  auto rng = Rng::from_seed(6);
  const auto master = replay_master(6);
  std::mt19937_64 gen(6);
  const auto key = random_block(gen);
  const auto ctx = set_key(m, key, Variant::xornesia, &rng);
  const auto s = aes::expand_key(key);
  const auto first = wrapped_first(m, ctx);
  const auto last = wrapped_last(m, ctx);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(first[i] ^ master[i], key[i]);
    EXPECT_EQ(last[i] ^ master[i], s[10].bytes[i]);
  }
}

TEST(SetKey, XornesiaChosenKeyGivesAwayMaster) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto chosen = random_block(gen);
    auto sc = coldboot::stage(Variant::xornesia, 200 + trial, 4, chosen);
    const auto w = wrapped_first(sc.machine, sc.context);
    aes::Block derived;
    for (std::size_t i = 0; i < 16; ++i) derived[i] = w[i] ^ chosen[i];
    EXPECT_EQ(derived, replay_master(200 + trial));
  }
}

TEST(SetKey, PlainStoresTwentyQuantities) {
  Machine m(MachineConfig{.mode = Mode::audit});
  std::mt19937_64 gen(8);
  const auto key = random_block(gen);
  const auto ctx = set_key(m, key, Variant::plain, nullptr);
  const auto s = aes::expand_key(key);
  const auto stored = plain_schedule(m, ctx);
  ASSERT_EQ(stored.size(), 20u);
  for (std::size_t r = 0; r <= 10; ++r) EXPECT_EQ(stored[r], s[r].bytes);
  for (std::size_t r = 1; r <= 9; ++r) {
    EXPECT_EQ(stored[11 + (9 - r)], reference::inv_mix_columns(s[r].bytes));
  }
  std::set<aes::Block> distinct(stored.begin(), stored.end());
  EXPECT_EQ(distinct.size(), 20u);
  for (const auto& q : stored) EXPECT_TRUE(contains(m.ram(), q));
  EXPECT_FALSE(m.violations().empty());
}

TEST(SetKey, KeyInputBufferIsCleared) {
  for (auto v : {Variant::amnesia, Variant::xornesia, Variant::plain}) {
    Machine m(MachineConfig{.mode = v == Variant::plain ? Mode::audit : Mode::enforcing});
    auto rng = Rng::from_seed(9);
    const aes::Block key{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
    set_key(m, key, v, &rng);
    EXPECT_EQ(m.read_ram(m.layout().key_input, 16), std::vector<std::uint8_t>(16, 0));
  }
}

TEST(SetKey, MissingMasterWithoutGenerator) {
  Machine m;
  const aes::Block key{};
  EXPECT_THROW(set_key(m, key, Variant::amnesia, nullptr), MissingMasterKey);
  const std::vector<std::uint8_t> short_key(8);
  auto rng = Rng::from_seed(1);
  EXPECT_THROW(set_key(m, short_key, Variant::amnesia, &rng), std::invalid_argument);
}

TEST(SetKey, MasterIsReusedAcrossKeys) {
  Machine m;
  auto rng = Rng::from_seed(10);
  set_key(m, aes::Block{}, Variant::amnesia, &rng);
  const auto counter = rng.counter();
  set_key(m, aes::Block{1}, Variant::amnesia, &rng);
  EXPECT_EQ(rng.counter(), counter);
}

TEST(Unwrap, FirstSteppedTenTimesIsLast) {
  std::mt19937_64 gen(11);
  for (auto v : {Variant::amnesia, Variant::xornesia}) {
    Machine m;
    auto rng = Rng::from_seed(11);
    const auto key = random_block(gen);
    const auto ctx = set_key(m, key, v, &rng);
    const auto s = aes::expand_key(key);

    auto read_pair = [&] {
      aes::Block b;
      store_le64(b.data(), m.reg(kernel::key_lo));
      store_le64(b.data() + 8, m.reg(kernel::key_hi));
      return b;
    };
    m.set_interrupts(false);
    unwrap_in_registers(m, ctx, Which::first);
    EXPECT_EQ(read_pair(), s[0].bytes);
    EXPECT_TRUE(m.tainted(kernel::key_lo));
    kernel::forward_to_last(m);
    const auto stepped = read_pair();
    unwrap_in_registers(m, ctx, Which::last);
    EXPECT_EQ(read_pair(), stepped);
    EXPECT_EQ(stepped, s[10].bytes);
    EXPECT_EQ(m.tainted_registers(), kernel::key_regs);
    m.zeroize_registers(kernel::key_regs);
    m.set_interrupts(true);
    for (const auto& rk : s) EXPECT_FALSE(contains(m.ram(), rk.bytes));
  }
}

TEST(Unwrap, RequiresInterruptsDisabled) {
  Machine m;
  auto rng = Rng::from_seed(12);
  const auto ctx = set_key(m, aes::Block{}, Variant::amnesia, &rng);
  EXPECT_THROW(unwrap_in_registers(m, ctx, Which::first), PolicyViolation);
}

TEST(ReleaseKey, ZeroesContext) {
  Machine m;
  auto rng = Rng::from_seed(13);
  const auto ctx = set_key(m, aes::Block{7}, Variant::amnesia, &rng);
  release_key(m, ctx);
  EXPECT_EQ(m.read_ram(ctx.address, ctx.size), std::vector<std::uint8_t>(ctx.size, 0));
}
