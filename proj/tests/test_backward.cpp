#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "near/backward.hpp"

using namespace near;

namespace {

ArchConfig fd_arch(bool appearance = true) {
  ArchConfig a;
  a.latent_dim = 4;
  a.seed_resolution = 2;
  a.seed_channels = 6;
  a.block_channels = {5};
  a.feature_channels = 3;
  a.head_hidden = {7, 6};
  a.use_appearance = appearance;
  return a;
}

struct Batch {
  std::vector<NormalizedPoint> points;
  std::vector<float> appearance, labels;
};

Batch random_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.points.push_back({u(rng), u(rng), u(rng)});
    b.appearance.push_back(0.5f + 0.5f * u(rng));
    b.labels.push_back(u(rng) > 0 ? 1.0f : 0.0f);
  }
  return b;
}

// Smallest distance of any ReLU / leaky-ReLU input from its kink. Central
// differences are only meaningful when no perturbation crosses one.
double kink_margin(const ModelParams<double>& p, const Evaluation<double>& ev) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& level : ev.decoder.level) m = std::min(m, level.cwiseAbs().minCoeff());
  for (const auto& c : ev.chunks) {
    const ColMat<double>* in = &c.input;
    for (std::size_t j = 0; j < c.hidden.size(); ++j) {
      ColMat<double> pre = p.head_w[j] * (*in);
      pre.colwise() += p.head_b[j];
      m = std::min(m, pre.cwiseAbs().minCoeff());
      in = &c.hidden[j];
    }
  }
  return m;
}

double rel_error(double num, double an) { return std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-6}); }

// Largest central-difference relative error over every parameter and latent
// entry, at the first seed from `seed` on whose activations keep clear of kinks.
double max_fd_error(const ArchConfig& a, const LossConfig& lc, std::uint64_t seed) {
  NearState<double> st;
  Batch b;
  for (;; ++seed) {
    st = init_model<double>(a, 1, seed);
    b = random_batch(16, seed + 100);
    const auto ev = evaluate<double>(a, st.params, st.latents.code(0), b.points, b.appearance, b.labels, lc);
    if (kink_margin(st.params, ev) > 1e-3) break;
  }
  const Vec<double> z = st.latents.code(0);
  auto eval = [&](const ModelParams<double>& p, const Vec<double>& zz) {
    return evaluate<double>(a, p, zz, b.points, b.appearance, b.labels, lc).loss;
  };
  const auto g = backward(a, st.params, evaluate<double>(a, st.params, z, b.points, b.appearance, b.labels, lc));
  const double h = 1e-5;
  double worst = 0;
  auto refs = st.params.tensors(a);
  const auto grefs = g.params.tensors(a);
  for (std::size_t t = 0; t < refs.size(); ++t)
    for (std::size_t i = 0; i < refs[t].data.size(); ++i) {
      const double old = refs[t].data[i];
      refs[t].data[i] = old + h;
      const double lp = eval(st.params, z);
      refs[t].data[i] = old - h;
      const double lm = eval(st.params, z);
      refs[t].data[i] = old;
      worst = std::max(worst, rel_error((lp - lm) / (2 * h), grefs[t].data[i]));
    }
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Vec<double> zp = z, zm = z;
    zp(i) += h;
    zm(i) -= h;
    worst = std::max(worst, rel_error((eval(st.params, zp) - eval(st.params, zm)) / (2 * h), g.latent(i)));
  }
  return worst;
}

}  // namespace

TEST(Backward, FiniteDifferenceAgreement) {
  EXPECT_LT(max_fd_error(fd_arch(), LossConfig{}, 7), 1e-4);
}

TEST(Backward, FiniteDifferenceShapeOnlyAndSquaredNorm) {
  LossConfig sq;
  sq.squared_norm = true;
  EXPECT_LT(max_fd_error(fd_arch(false), sq, 8), 1e-4);
}

TEST(BackwardProperty, FiniteDifferenceAcrossSeeds) {
  ArchConfig a = fd_arch();
  a.block_channels = {4, 3};
  for (std::uint64_t seed = 20; seed < 23; ++seed) EXPECT_LT(max_fd_error(a, LossConfig{}, seed), 1e-4) << seed;
}

TEST(Backward, ZeroOutputLayerBlocksUpstreamGradients) {
  const ArchConfig a = fd_arch();
  auto st = init_model<double>(a, 1, 3);
  st.params.head_w.back().setZero();
  const Batch b = random_batch(16, 4);
  const Vec<double> z = st.latents.code(0);
  const auto g = backward(a, st.params, evaluate<double>(a, st.params, z, b.points, b.appearance, b.labels, {}));
  const auto refs = g.params.tensors(a);
  for (const auto& t : refs) {
    if (t.name.starts_with("head.layer2")) continue;
    for (double v : t.data) EXPECT_EQ(v, 0.0) << t.name;
  }
  // only the norm penalty reaches the latent
  const Vec<double> expect = 0.01 * z / z.norm();
  EXPECT_LT((g.latent - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, DuplicatedBatchGivesSameGradient) {
  const ArchConfig a = fd_arch();
  const auto st = init_model<double>(a, 1, 5);
  const Batch b = random_batch(16, 6);
  Batch twice = b;
  twice.points.insert(twice.points.end(), b.points.begin(), b.points.end());
  twice.appearance.insert(twice.appearance.end(), b.appearance.begin(), b.appearance.end());
  twice.labels.insert(twice.labels.end(), b.labels.begin(), b.labels.end());
  const Vec<double> z = st.latents.code(0);
  const auto e1 = evaluate<double>(a, st.params, z, b.points, b.appearance, b.labels, {});
  const auto e2 = evaluate<double>(a, st.params, z, twice.points, twice.appearance, twice.labels, {}, Exec{1, 5});
  EXPECT_NEAR(e1.loss, e2.loss, 1e-14);
  const auto g1 = backward(a, st.params, e1), g2 = backward(a, st.params, e2);
  const auto r1 = g1.params.tensors(a), r2 = g2.params.tensors(a);
  for (std::size_t t = 0; t < r1.size(); ++t)
    for (std::size_t i = 0; i < r1[t].data.size(); ++i) EXPECT_NEAR(r1[t].data[i], r2[t].data[i], 1e-13) << r1[t].name;
}

TEST(Backward, ProjectionBiasGradientConservesMass) {
  // every trilinear gather spreads weights summing to one, so the bias gradient
  // of a level projection equals the summed feature gradients of the points
  const ArchConfig a = fd_arch();
  const auto st = init_model<double>(a, 1, 9);
  const Batch b = random_batch(16, 10);
  const Vec<double> z = st.latents.code(0);
  const auto ev = evaluate<double>(a, st.params, z, b.points, b.appearance, b.labels, {});
  const auto g = backward(a, st.params, ev);
  const auto& tr = ev.chunks.at(0);
  const int k = a.feature_channels;
  const auto hg = detail::head_backward(st.params, tr, [&] {
    RowVec<double> d(tr.logit.size());
    for (Eigen::Index j = 0; j < d.size(); ++j) d(j) = (ev.prob[j] - ev.labels[j]) / 16.0;
    return d;
  }());
  for (int l = 0; l < a.levels(); ++l) {
    const Vec<double> summed = hg.d_input.middleRows(3 + l * k, k).rowwise().sum();
    EXPECT_LT((summed - g.params.proj_b[l]).cwiseAbs().maxCoeff(), 1e-14) << l;
  }
}

TEST(Backward, ThreadCountInvariant) {
  const ArchConfig a;
  const auto st = init_model<float>(a, 1, 2);
  const Batch b = random_batch(3000, 3);
  const Vec<float> z = st.latents.code(0);
  const auto e1 = evaluate<float>(a, st.params, z, b.points, b.appearance, b.labels, {}, Exec{1});
  const auto e3 = evaluate<float>(a, st.params, z, b.points, b.appearance, b.labels, {}, Exec{3});
  EXPECT_EQ(e1.loss, e3.loss);
  const auto g1 = backward(a, st.params, e1, Exec{1}), g3 = backward(a, st.params, e3, Exec{3});
  EXPECT_EQ(g1.params, g3.params);
  EXPECT_EQ(g1.latent, g3.latent);
}

TEST(Backward, NonFiniteInputsRaiseNumericError) {
  const ArchConfig a = fd_arch();
  auto st = init_model<double>(a, 1, 1);
  const Batch b = random_batch(4, 2);
  st.params.head_b.back()(0) = std::numeric_limits<double>::quiet_NaN();
  try {
    evaluate<double>(a, st.params, st.latents.code(0), b.points, b.appearance, b.labels, {});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.tensor(), "head.logit");
  }
  EXPECT_THROW(evaluate<double>(a, st.params, st.latents.code(0), b.points, b.appearance,
                                std::vector<float>(3, 0.0f), {}),
               ShapeMismatch);
}
