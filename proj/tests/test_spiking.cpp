// SPDX-License-Identifier: Apache-2.0
#include <random>
#include <sstream>
#include <stdexcept>

#include <doctest.h>

#include "sorbet/energy.hpp"
#include "sorbet/quantize.hpp"
#include "sorbet/spiking.hpp"

using namespace sorbet;

TEST_CASE("neuron state validation") {
  NeuronState s;
  s.theta = 256;
  s.v_rest = 0;
  CHECK_NOTHROW(s.validate());
  s.theta = 0;
  CHECK_THROWS_AS(s.validate(), std::logic_error);
  s.theta = 256;
  s.tau_m_log2 = -1;
  CHECK_THROWS_AS(s.validate(), std::logic_error);
}

TEST_CASE("leaky membrane trace") {
  NeuronState s;
  s.theta = 256;  // 1.0 on an 8-bit grid
  s.tau_m_log2 = 1;
  // subthreshold drive converges without firing
  for (int t = 0; t < 50; ++t) CHECK_FALSE(if_step(s, 192));
  CHECK(s.v <= 192);
  // suprathreshold drive: v walks 160, 240, 280 -> fire, subtract reset
  NeuronState f;
  f.theta = 256;
  f.tau_m_log2 = 1;
  CHECK_FALSE(if_step(f, 320));
  CHECK(f.v == 160);
  CHECK_FALSE(if_step(f, 320));
  CHECK(f.v == 240);
  CHECK(if_step(f, 320));
  CHECK(f.v == 24);  // 280 - 256

  NeuronState z = f;
  z.reset = ResetMode::to_zero;
  z.v = 240;
  CHECK(if_step(z, 320));
  CHECK(z.v == 0);
}

TEST_CASE("memoryless membrane with unit time constant") {
  NeuronState s;
  s.theta = 256;
  s.tau_m_log2 = 0;  // v <- i_syn + v_rest each step
  if_step(s, 100);
  CHECK(s.v == 100);
  if_step(s, 31);
  CHECK(s.v == 31);
}

TEST_CASE("pure accumulator emits exactly the encoded count") {
  // constant drive theta * q / T over T steps => exactly q spikes
  const std::int64_t theta = 256;
  const std::size_t T = 16;
  for (std::int64_t q = 0; q <= 16; ++q) {
    NeuronState s;
    s.theta = theta;
    std::int64_t spikes = 0;
    for (std::size_t t = 0; t < T; ++t)
      if (integrate_fire_step(s, theta * q / static_cast<std::int64_t>(T)))
        ++spikes;
    CHECK(spikes == q);
  }
}

TEST_CASE("spike train storage and raster dump") {
  SpikeTrain tr(4, {2, 3});
  CHECK(tr.timesteps() == 4);
  CHECK(tr.feature_size() == 6);
  tr.set_spike(0, 5, true);
  tr.set_spike(3, 0, true);
  CHECK(tr.spike(0, 5));
  CHECK_FALSE(tr.spike(1, 5));
  CHECK(tr.total_spikes() == 2);
  CHECK(tr.rate() == doctest::Approx(2.0 / 24.0));
  std::ostringstream os;
  tr.write_raster_csv(os);
  CHECK(os.str() == "t,index\n0,5\n3,0\n");
}

TEST_CASE("rate coding is unary and exact") {
  const FixedTensor levels = FixedTensor::from_mantissas({0, 3, 16, 7}, {4}, 0);
  const SpikeTrain tr = encode_rate(levels, 16);
  CHECK(tr.total_spikes() == 26);
  for (std::size_t t = 0; t < 16; ++t) {
    CHECK(tr.spike(t, 1) == (t < 3));
    CHECK(tr.spike(t, 2));
    CHECK(tr.spike(t, 3) == (t < 7));
  }
  const FixedTensor back = decode_counts(tr);
  CHECK(back.frac_bits() == 0);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(back.mantissa(i) == levels.mantissa(i));

  CHECK_THROWS_AS(encode_rate(FixedTensor({1}, 2), 16),
                  std::invalid_argument);  // non-integer grid
  CHECK_THROWS_AS(encode_rate(FixedTensor::from_mantissas({17}, {1}, 0), 16),
                  std::domain_error);  // over capacity
  CHECK_THROWS_AS(encode_rate(FixedTensor::from_mantissas({-1}, {1}, 0), 16),
                  std::domain_error);
}

namespace {

BinaryLinear random_binary(std::mt19937_64& rng, std::size_t m,
                           std::size_t p) {
  BinaryLinear w;
  w.rows = m;
  w.cols = p;
  w.signs.resize(m * p);
  for (auto& s : w.signs) s = (rng() & 1) ? 1 : -1;
  w.scale_exponent = static_cast<int>(rng() % 7) - 3;
  return w;
}

FixedTensor random_levels(std::mt19937_64& rng, std::size_t rows,
                          std::size_t m, std::int64_t max_level) {
  FixedTensor t({rows, m}, 0, 64);
  for (std::size_t i = 0; i < rows * m; ++i)
    t.set_mantissa(i, static_cast<std::int64_t>(
                          rng() % static_cast<std::uint64_t>(max_level + 1)));
  return t;
}

}  // namespace

TEST_CASE("spiking matmul equals the level-domain twin, binary weights") {
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng() % 4, m = 1 + rng() % 24,
                      p = 1 + rng() % 24;
    BinaryLinear w = random_binary(rng, m, p);
    if (trial % 3 == 0) {
      std::vector<double> bias(p);
      for (auto& b : bias)
        b = -1.0 + 2.0 * (static_cast<double>(rng() % 1000) / 999.0);
      w.out_bias = FixedTensor::from_reals(bias, {p}, 8);
    }
    const FixedTensor lv = random_levels(rng, rows, m, 15);
    const SpikeTrain tr = encode_rate(lv, 16);

    FixedTensor a, b;
    const OpCounter spike_ops = measure([&] { a = spiking_matmul(tr, w); });
    const OpCounter level_ops = measure([&] { b = level_matmul(lv, w); });

    REQUIRE(a.shape() == b.shape());
    CHECK(a.frac_bits() == b.frac_bits());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a.mantissa(i) == b.mantissa(i));

    // the spiking path: one signed add per (spike, output), zero multiplies
    OpCounter want;
    want.add = tr.total_spikes() * p +
               (w.out_bias.size() > 0 ? rows * p : 0);
    want.shift = rows * p;
    CHECK(spike_ops == want);
    // the level twin is priced as the dense baseline
    CHECK(level_ops.mul == rows * m * p);
  }
}

TEST_CASE("spiking matmul equals the level-domain twin, fixed rhs") {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng() % 4, m = 1 + rng() % 16,
                      p = 1 + rng() % 16;
    std::vector<double> vals(m * p);
    for (auto& v : vals)
      v = -2.0 + 4.0 * (static_cast<double>(rng() % 10000) / 9999.0);
    const FixedTensor rhs = FixedTensor::from_reals(vals, {m, p}, 8);
    const FixedTensor lv = random_levels(rng, rows, m, 15);
    const SpikeTrain tr = encode_rate(lv, 16);
    const int level_exp = -4;

    const FixedTensor a = spiking_matmul(tr, rhs, level_exp);
    const FixedTensor b = level_matmul(lv, rhs, level_exp);
    REQUIRE(a.shape() == b.shape());
    CHECK(a.frac_bits() == b.frac_bits());
    CHECK(a.frac_bits() == 12);  // rhs grid minus the level exponent
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a.mantissa(i) == b.mantissa(i));
  }
}

TEST_CASE("spiking matmul value check against plain integer arithmetic") {
  // levels [2, 3] against signs [[+,-],[+,+]], scale 2^-1
  BinaryLinear w;
  w.rows = 2;
  w.cols = 2;
  w.signs = {1, -1, 1, 1};
  w.scale_exponent = -1;
  const FixedTensor lv = FixedTensor::from_mantissas({2, 3}, {1, 2}, 0, 64);
  const FixedTensor out = spiking_matmul(encode_rate(lv, 4), w);
  // raw accumulations: [2+3, -2+3] = [5, 1]; scale 2^-1 -> values [2.5, 0.5]
  CHECK(out.real(0) == doctest::Approx(2.5));
  CHECK(out.real(1) == doctest::Approx(0.5));
}
