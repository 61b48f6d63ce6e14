#pragma once

// Reverse-mode gradients of the training loss through the fixed NeAR graph:
// BCE -> sigmoid -> MLP head -> trilinear feature gathers -> per-level 1x1x1
// projections -> upsample+conv blocks -> seed projection -> latent code.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "near/error.hpp"
#include "near/model.hpp"
#include "near/parallel.hpp"

namespace near {

/// Forward evaluation of the loss on one batch, with every intermediate the
/// backward pass needs.
template <class T>
struct Evaluation {
  DecoderTrace<T> decoder;
  FeaturePyramid<T> pyramid;
  std::vector<HeadChunkTrace<T>> chunks;
  std::vector<NormalizedPoint> points;
  std::vector<float> labels;
  std::vector<T> prob;
  LossConfig loss_cfg;
  double loss = 0;
};

/// Gradients congruent with ModelParams plus the active latent code.
template <class T>
struct GradientTape {
  ModelParams<T> params;
  Vec<T> latent;
};

template <class T>
Evaluation<T> evaluate(const ArchConfig& arch, const ModelParams<T>& p, const Vec<T>& z,
                       std::span<const NormalizedPoint> pts, std::span<const float> appearance,
                       std::span<const float> labels, const LossConfig& loss_cfg, const Exec& exec = {}) {
  if (labels.size() != pts.size()) throw ShapeMismatch("evaluate: label count differs from point count");
  Evaluation<T> ev;
  ev.pyramid = decode_features(arch, p, z, &ev.decoder, exec.threads);
  ev.chunks = query_traced(arch, p, ev.pyramid, pts, appearance, exec);
  ev.points.assign(pts.begin(), pts.end());
  ev.labels.assign(labels.begin(), labels.end());
  ev.prob.resize(pts.size());
  for (const auto& c : ev.chunks)
    for (Eigen::Index j = 0; j < c.logit.size(); ++j) {
      if (!std::isfinite(static_cast<double>(c.logit(j)))) throw NumericError("head.logit", "forward pass");
      ev.prob[c.begin + j] = detail::sigmoid(c.logit(j));
    }
  ev.loss_cfg = loss_cfg;
  ev.loss = loss<T>(ev.prob, ev.labels, z, loss_cfg);
  if (!std::isfinite(ev.loss)) throw NumericError("loss", "forward pass");
  return ev;
}

namespace detail {

template <class T>
struct HeadGrads {
  std::vector<RowMat<T>> w;
  std::vector<Vec<T>> b;
  ColMat<T> d_input;
};

template <class T>
HeadGrads<T> head_backward(const ModelParams<T>& p, const HeadChunkTrace<T>& tr, const RowVec<T>& d_logit) {
  HeadGrads<T> g;
  const std::size_t layers = p.head_w.size();
  g.w.resize(layers);
  g.b.resize(layers);
  ColMat<T> delta = d_logit;  // gradient w.r.t. the current layer's pre-activation
  for (std::size_t j = layers; j-- > 0;) {
    const ColMat<T>& in = j == 0 ? tr.input : tr.hidden[j - 1];
    g.w[j] = delta * in.transpose();
    g.b[j] = delta.rowwise().sum();
    ColMat<T> d_in = p.head_w[j].transpose() * delta;
    if (j == 0) {
      g.d_input = std::move(d_in);
    } else {
      const ColMat<T>& act = tr.hidden[j - 1];
      delta = (act.array() > T(0)).select(d_in, T(0));
    }
  }
  return g;
}

template <class T>
void add_into(HeadGrads<T>& a, const HeadGrads<T>& b) {
  for (std::size_t j = 0; j < a.w.size(); ++j) {
    a.w[j] += b.w[j];
    a.b[j] += b.b[j];
  }
}

// Backward of one upsample+conv block. d_out holds dL/d(post-activation output)
// and is consumed. Accumulates into dw, db and returns dL/dx.
template <class T>
ColMat<T> conv_block_backward(const RowMat<T>& w, const ColMat<T>& x, const ColMat<T>& y, ColMat<T>& d_out,
                              std::int64_t r, T slope, RowMat<T>& dw, Vec<T>& db, int threads) {
  const auto cin = x.rows(), cout = w.rows();
  const PaddedGeometry g(r);
  leaky_backward_inplace(d_out, y, slope);
  db += d_out.rowwise().sum();
  ColMat<T> xpad;
  pad_grid(x, g, xpad);

  std::vector<ColMat<T>> dyp(8);
  std::vector<RowMat<T>> de(8);
  parallel_for(8, threads, [&](std::int64_t parity) {
    const int par = static_cast<int>(parity);
    dyp[parity].setZero(cout, g.length);
    for (std::int64_t q = 0; q < r * r * r; ++q) dyp[parity].col(g.padded(q) - g.first) = d_out.col(parity_voxel(q, r, par));
    de[parity].resize(cout, 8 * cin);
    for (int a = 0; a < 8; ++a)
      de[parity].middleCols(a * cin, cin).noalias() =
          dyp[parity] * xpad.middleCols(g.first + g.shift(a, par), g.length).transpose();
  });

  ColMat<T> dxpad = ColMat<T>::Zero(cin, g.p * g.p * g.p);
  for (int parity = 0; parity < 8; ++parity) {
    unfold_kernel_grad(de[parity], static_cast<int>(cin), parity, dw);
    const RowMat<T> e = fold_kernel(w, static_cast<int>(cin), parity);
    for (int a = 0; a < 8; ++a)
      dxpad.middleCols(g.first + g.shift(a, parity), g.length).noalias() +=
          e.middleCols(a * cin, cin).transpose() * dyp[parity];
  }
  ColMat<T> dx(cin, r * r * r);
  for (std::int64_t q = 0; q < r * r * r; ++q) dx.col(q) = dxpad.col(g.padded(q));
  return dx;
}

template <class T>
void require_finite(std::span<const T> data, const std::string& name) {
  for (T v : data)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError(name, "backward pass");
}

}  // namespace detail

/// Exact gradients of the evaluation's loss with respect to every decoder and
/// head parameter and the latent code. Appearance and coordinates are inputs,
/// not variables.
template <class T>
GradientTape<T> backward(const ArchConfig& arch, const ModelParams<T>& p, const Evaluation<T>& ev,
                         const Exec& exec = {}) {
  const T slope = static_cast<T>(arch.decoder_leak);
  const auto n = static_cast<double>(ev.points.size());
  const int k = arch.feature_channels;
  GradientTape<T> g;
  g.params = ModelParams<T>::zeros(arch);

  // loss -> logits, chunk by chunk
  std::vector<detail::HeadGrads<T>> parts(ev.chunks.size());
  parallel_for(static_cast<std::int64_t>(ev.chunks.size()), exec.threads, [&](std::int64_t c) {
    const auto& tr = ev.chunks[c];
    RowVec<T> d_logit(tr.logit.size());
    for (Eigen::Index j = 0; j < tr.logit.size(); ++j) {
      const double o = static_cast<double>(ev.prob[tr.begin + j]);
      const bool clamped = o < kProbClamp || o > 1.0 - kProbClamp;
      d_logit(j) = clamped ? T(0) : static_cast<T>((o - ev.labels[tr.begin + j]) / n);
    }
    parts[c] = detail::head_backward(p, tr, d_logit);
  });
  std::vector<ColMat<T>> d_inputs(parts.size());
  for (std::size_t c = 0; c < parts.size(); ++c) d_inputs[c] = std::move(parts[c].d_input);
  tree_reduce(parts, [](auto& a, const auto& b) { detail::add_into(a, b); });
  if (!parts.empty()) {
    for (std::size_t j = 0; j < parts[0].w.size(); ++j) {
      g.params.head_w[j] = std::move(parts[0].w[j]);
      g.params.head_b[j] = std::move(parts[0].b[j]);
    }
  }

  // trilinear gathers -> feature grids; levels are independent
  std::vector<ColMat<T>> d_feat(arch.levels());
  parallel_for(arch.levels(), exec.threads, [&](std::int64_t l) {
    const std::int64_t r = ev.pyramid.resolution[l];
    d_feat[l] = ColMat<T>::Zero(k, r * r * r);
    for (std::size_t c = 0; c < ev.chunks.size(); ++c) {
      const auto& di = d_inputs[c];
      for (Eigen::Index j = 0; j < di.cols(); ++j) {
        const auto st = trilinear_stencil<T>(cube(r), ev.points[ev.chunks[c].begin + j]);
        const T* src = di.data() + j * di.rows() + 3 + l * k;
        for (int corner = 0; corner < 8; ++corner) {
          T* dst = d_feat[l].data() + st.index[corner] * k;
          const T wgt = st.weight[corner];
          for (int ch = 0; ch < k; ++ch) dst[ch] += wgt * src[ch];
        }
      }
    }
  });

  // projections -> level activations
  std::vector<ColMat<T>> d_level(arch.levels());
  for (int l = 0; l < arch.levels(); ++l) {
    g.params.proj_w[l] = d_feat[l] * ev.decoder.level[l].transpose();
    g.params.proj_b[l] = d_feat[l].rowwise().sum();
    d_level[l] = p.proj_w[l].transpose() * d_feat[l];
  }

  // conv blocks, top-down
  for (int i = static_cast<int>(p.conv_w.size()) - 1; i >= 0; --i) {
    const std::int64_t r = arch.level_resolution(i);
    ColMat<T> dx = detail::conv_block_backward(p.conv_w[i], ev.decoder.level[i], ev.decoder.level[i + 1],
                                               d_level[i + 1], r, slope, g.params.conv_w[i], g.params.conv_b[i],
                                               exec.threads);
    d_level[i] += dx;
  }

  // seed projection -> latent
  ColMat<T>& d_seed = d_level[0];
  detail::leaky_backward_inplace(d_seed, ev.decoder.level[0], slope);
  const Eigen::Map<const Vec<T>> d_pre(d_seed.data(), d_seed.size());
  g.params.seed_w = d_pre * ev.decoder.z.transpose();
  g.params.seed_b = d_pre;
  g.latent = p.seed_w.transpose() * d_pre;

  const Vec<T>& z = ev.decoder.z;
  const double lambda = ev.loss_cfg.lambda;
  if (ev.loss_cfg.squared_norm) {
    g.latent += static_cast<T>(2.0 * lambda) * z;
  } else {
    double sq = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) sq += static_cast<double>(z(i)) * static_cast<double>(z(i));
    if (sq > 0) g.latent += static_cast<T>(lambda / std::sqrt(sq)) * z;
  }

  for (const auto& t : g.params.tensors(arch)) detail::require_finite<T>(t.data, t.name);
  detail::require_finite<T>(std::span<const T>(g.latent.data(), g.latent.size()), "latent");
  return g;
}

}  // namespace near
