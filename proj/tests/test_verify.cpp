// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <optional>
#include <stdexcept>

#include <doctest.h>

#include "sorbet/verify.hpp"

using namespace sorbet;

TEST_CASE("seed mixing is stateless and index-sensitive") {
  CHECK(mix_seed(1, 0) == mix_seed(1, 0));
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(0, 0) != 0);
}

TEST_CASE("bound check on a clean row") {
  const FixedTensor row = FixedTensor::from_reals({1.0, 0.0, -2.0}, {3}, 8);
  CHECK(check_row_bounds(row, Pow2Round::round_nearest, std::nullopt).empty());
  CHECK(check_row_bounds(row, Pow2Round::ceil, std::nullopt).empty());
}

TEST_CASE("adversarial row: ceiling the normalizer breaks the band") {
  // Sum of ceiled powers 17 + 2^-9: ceil snaps to 32 (off by ~1.88x),
  // round-nearest snaps to 16. Only the ceil variant leaves the band.
  const FixedTensor row = FixedTensor::from_reals(
      {0.0, 0.01, 0.01, 0.01, 0.01, 2.01, -9.5}, {7}, 8);
  const auto ceil_violations =
      check_row_bounds(row, Pow2Round::ceil, std::nullopt);
  CHECK_FALSE(ceil_violations.empty());
  bool band_hit = false;
  for (const auto& v : ceil_violations) {
    if (v.bound.find("softmax-band") != std::string::npos) {
      band_hit = true;
      CHECK(v.ratio < 1.0 / (2.0 * std::sqrt(2.0)));
    }
  }
  CHECK(band_hit);
  CHECK(check_row_bounds(row, Pow2Round::round_nearest, std::nullopt).empty());
}

TEST_CASE("randomized bound suite passes and is deterministic") {
  BoundCheckConfig cfg;
  cfg.samples = 2000;
  cfg.seed = 7;
  const BoundCheckResult a = verify_pow2_softmax_bounds(cfg);
  CHECK(a.pass());
  CHECK(a.rows_checked == 2000);
  CHECK(a.elements_checked > 2000);
  CHECK(a.band_violations == 0);
  CHECK(a.decomposition_violations == 0);
  const double lo = 1.0 / (2.0 * std::sqrt(2.0));
  const double hi = 2.0 * std::sqrt(2.0);
  CHECK(a.min_ratio >= lo);
  CHECK(a.max_ratio <= hi);
  CHECK(a.min_ratio <= a.max_ratio);

  cfg.threads = 3;  // thread count must not change the verdict or the stats
  const BoundCheckResult b = verify_pow2_softmax_bounds(cfg);
  CHECK(b.rows_checked == a.rows_checked);
  CHECK(b.elements_checked == a.elements_checked);
  CHECK(b.min_ratio == a.min_ratio);
  CHECK(b.max_ratio == a.max_ratio);
}

TEST_CASE("bound suite exercises the clamp path") {
  BoundCheckConfig cfg;
  cfg.samples = 500;
  cfg.seed = 9;
  cfg.use_clamp = true;
  cfg.clamp_max = 0.001;
  const BoundCheckResult r = verify_pow2_softmax_bounds(cfg);
  // clamping redistributes mass; the decomposition bounds still hold
  CHECK(r.decomposition_violations == 0);
  CHECK(r.rows_checked == 500);
}

TEST_CASE("bound suite configuration errors") {
  BoundCheckConfig cfg;
  cfg.min_len = 8;
  cfg.max_len = 2;
  CHECK_THROWS_AS(verify_pow2_softmax_bounds(cfg), std::invalid_argument);
  BoundCheckConfig cfg2;
  cfg2.min_val = 3.0;
  cfg2.max_val = -3.0;
  CHECK_THROWS_AS(verify_pow2_softmax_bounds(cfg2), std::invalid_argument);
}

TEST_CASE("operation-count conformance suite") {
  const SuiteResult r = verify_opcount_conformance();
  CHECK(r.pass);
  CHECK(r.failures == 0);
  CHECK(r.checked == 4 * 4 - 1);  // layernorm skips n = 1
  CHECK(r.name == "opcount-conformance");
}

TEST_CASE("spiking equivalence suite") {
  const SuiteResult r = verify_spiking_equivalence(50, 16, 4, 11);
  CHECK(r.pass);
  CHECK(r.checked == 50);
  CHECK(r.failures == 0);
  CHECK(r.name == "spiking-equivalence");
}

TEST_CASE("distillation gradient suite") {
  const SuiteResult r = verify_distill_gradients(10, 1e-4, 13);
  CHECK(r.pass);
  CHECK(r.checked >= 10);
  CHECK(r.name == "distill-gradients");
}

TEST_CASE("full suite runner") {
  SuiteConfig cfg;
  cfg.bounds.samples = 1000;
  cfg.equivalence_instances = 25;
  cfg.gradient_batches = 5;
  const std::vector<SuiteResult> rs = run_suite(cfg);
  REQUIRE(rs.size() == 4);
  CHECK(rs[0].name == "pow2-softmax-bounds");
  CHECK(rs[1].name == "opcount-conformance");
  CHECK(rs[2].name == "spiking-equivalence");
  CHECK(rs[3].name == "distill-gradients");
  for (const auto& r : rs) CHECK(r.pass);
}
