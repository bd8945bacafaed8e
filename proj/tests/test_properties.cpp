#include "support/properties.hpp"

#include <doctest.h>

using namespace gxe::testing;

namespace {

void require(const Outcome& o) {
  INFO(o.detail);
  MESSAGE(o.detail);
  CHECK(o.pass);
}

}  // namespace

TEST_SUITE("properties") {
  TEST_CASE("Spearman(W2, sigma2) is exactly 1 on random tables") { require(spearman_w2_sigma2()); }

  TEST_CASE("SVD: reconstruction, orthonormality, ordering and scaling on random matrices") {
    require(svd_random());
  }

  TEST_CASE("distribution functions match the high-precision reference table") {
    require(distribution_table(GXESTAT_TEST_DATA "/dist_oracle.csv"));
  }

  TEST_CASE("variance components and tests are shift and scale invariant") { require(mixed_model_invariance()); }

  TEST_CASE("stability statistics are shift and scale invariant") { require(stability_invariance()); }

  TEST_CASE("component selection: pure noise retains none") { require(forkman_piepho(false)); }

  TEST_CASE("component selection: a planted rank-1 signal retains one") { require(forkman_piepho(true)); }
}
