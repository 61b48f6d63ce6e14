#include <gtest/gtest.h>

#include <random>

#include "near/metrics.hpp"
#include "test_util.hpp"

using namespace near;
using near::testing::oracle;

namespace {

VolumeGrid plate(std::int64_t d) {
  VolumeGrid m = VolumeGrid::mask(cube(6));
  for (std::int64_t h = 0; h < 6; ++h)
    for (std::int64_t w = 0; w < 6; ++w) m(d, h, w) = 1;
  return m;
}

}  // namespace

TEST(Dsc, IdenticalDisjointAndHalf) {
  VolumeGrid a = VolumeGrid::mask(Shape3{1, 1, 8}), b = a;
  for (int i = 0; i < 4; ++i) a[i] = 1;
  for (int i = 2; i < 6; ++i) b[i] = 1;
  EXPECT_EQ(dsc(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dsc(a, b), oracle()["dsc_half"].get<double>());
  VolumeGrid c = VolumeGrid::mask(Shape3{1, 1, 8});
  c[7] = 1;
  EXPECT_EQ(dsc(a, c), 0.0);
}

TEST(Dsc, EmptyConventionAndShapeCheck) {
  const VolumeGrid e = VolumeGrid::mask(cube(3));
  EXPECT_EQ(dsc(e, e), 1.0);
  EXPECT_THROW(dsc(e, VolumeGrid::mask(cube(4))), ShapeMismatch);
}

TEST(Nsd, IdenticalIsOne) {
  std::mt19937_64 rng(2);
  const VolumeGrid m = near::testing::random_mask(cube(8), 0.4, rng);
  EXPECT_EQ(nsd(m, m, 0.0), 1.0);
  EXPECT_EQ(nsd(m, m, 1.0), 1.0);
}

TEST(Nsd, ParallelPlates) {
  const auto& o = oracle()["plates"];
  EXPECT_EQ(nsd(plate(2), plate(3), 1.0), o["tau1"].get<double>());
  EXPECT_EQ(nsd(plate(2), plate(3), 0.5), o["tau05"].get<double>());
}

TEST(Nsd, EmptyConventions) {
  const VolumeGrid e = VolumeGrid::mask(cube(6));
  EXPECT_EQ(nsd(e, e), 1.0);
  EXPECT_EQ(nsd(e, plate(1)), 0.0);
  EXPECT_EQ(nsd(plate(1), e), 0.0);
}

TEST(Nsd, Errors) {
  const VolumeGrid a = plate(1);
  VolumeGrid b = VolumeGrid::mask(cube(6), {1, 1, 2});
  EXPECT_THROW(nsd(a, b), ShapeMismatch);
  EXPECT_THROW(nsd(a, VolumeGrid::mask(cube(5))), ShapeMismatch);
  EXPECT_THROW(nsd(a, a, -0.1), InvalidArgument);
}

TEST(Metrics, ReferencePairs) {
  for (const auto& p : oracle()["metric_pairs"]) {
    const auto sp = p["spacing"];
    const Spacing spacing{sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    const VolumeGrid a = near::testing::mask_from(p["a"], cube(8), spacing);
    const VolumeGrid b = near::testing::mask_from(p["b"], cube(8), spacing);
    EXPECT_NEAR(dsc(a, b), p["dsc"].get<double>(), 1e-12);
    for (const auto& [tau, value] : p["nsd"].items())
      EXPECT_NEAR(nsd(a, b, std::stod(tau)), value.get<double>(), 1e-12) << "tau " << tau;
  }
}

TEST(MetricsProperty, SymmetricAndMatchBruteForce) {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> dens(0.05, 0.7);
  for (int trial = 0; trial < 40; ++trial) {
    const Spacing spacing = trial % 3 == 0 ? Spacing{1.0, 0.75, 1.5} : Spacing{1, 1, 1};
    const VolumeGrid a = near::testing::random_mask(cube(8), dens(rng), rng, spacing);
    const VolumeGrid b = near::testing::random_mask(cube(8), dens(rng), rng, spacing);
    EXPECT_EQ(dsc(a, b), dsc(b, a));
    EXPECT_NEAR(dsc(a, b), near::testing::brute_force_dsc(a, b), 1e-12);
    double prev = -1;
    for (double tau : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) {
      const double v = nsd(a, b, tau);
      EXPECT_EQ(v, nsd(b, a, tau));
      EXPECT_NEAR(v, near::testing::brute_force_nsd(a, b, tau), 1e-12);
      EXPECT_GE(v, prev);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(Aggregate, MeanAndPopulationStd) {
  const std::vector<CaseMetrics> one{{"a", 0.8, 0.9}};
  EXPECT_EQ(aggregate(one).dsc.std, 0.0);
  const std::vector<CaseMetrics> two{{"a", 0.70, 0.5}, {"b", 0.72, 0.5}};
  const auto s = aggregate(two);
  const auto& o = oracle()["aggregate_pair"];
  EXPECT_NEAR(s.dsc.mean, o["mean"].get<double>(), 1e-15);
  EXPECT_NEAR(s.dsc.std, o["std"].get<double>(), 1e-15);
  EXPECT_EQ(s.nsd.std, 0.0);
  EXPECT_EQ(s.cases, 2u);
  EXPECT_THROW(aggregate(std::vector<CaseMetrics>{}), InvalidArgument);
}
