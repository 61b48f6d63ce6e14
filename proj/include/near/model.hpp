#pragma once

// The appearance-aware implicit occupancy network.
//
// A per-shape latent code z is decoded by a small convolutional generator into
// a pyramid of dense feature grids (4^3, 8^3, 16^3, 32^3 by default). A query
// point gathers one trilinearly interpolated feature vector from every level,
// appends its coordinates and (optionally) the image appearance at that point,
// and an MLP maps the concatenation to an occupancy probability.
//
// Layouts. Activations are column-major (channels x voxels), so a voxel's
// channel vector is contiguous. Weights are row-major with logical shapes:
//   decoder.seed.weight        [R0, R0, R0, C0, c]   (row = voxel*C0 + channel)
//   decoder.block{i}.conv.weight [Cout, 3, 3, 3, Cin]
//   decoder.proj{i}.weight     [k, C_level]
//   head.layer{j}.weight       [out, in]
// Head input order: [p (3), level 0 features (k), ..., level m-1 features (k), a].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "near/error.hpp"
#include "near/parallel.hpp"
#include "near/sampling.hpp"

namespace near {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct ArchConfig {
  int latent_dim = 128;
  int seed_resolution = 4;
  int seed_channels = 256;
  std::vector<int> block_channels{128, 64, 32};
  int feature_channels = 16;
  std::vector<int> head_hidden{128, 128};
  bool use_appearance = true;
  double decoder_leak = 0.2;  // negative slope of the decoder's leaky ReLU

  int levels() const { return static_cast<int>(block_channels.size()) + 1; }
  std::int64_t level_resolution(int level) const { return std::int64_t{seed_resolution} << level; }
  int level_channels(int level) const { return level == 0 ? seed_channels : block_channels[level - 1]; }
  int head_input_width() const { return 3 + levels() * feature_channels + (use_appearance ? 1 : 0); }

  void validate() const {
    if (latent_dim < 1 || seed_resolution < 1 || seed_channels < 1 || feature_channels < 1)
      throw InvalidArgument("architecture sizes must be positive");
    for (int c : block_channels)
      if (c < 1) throw InvalidArgument("block channels must be positive");
    for (int h : head_hidden)
      if (h < 1) throw InvalidArgument("head widths must be positive");
    if (!(decoder_leak >= 0 && decoder_leak < 1)) throw InvalidArgument("decoder_leak must be in [0,1)");
  }
  bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = {{"latent_dim", a.latent_dim},         {"seed_resolution", a.seed_resolution},
       {"seed_channels", a.seed_channels},   {"block_channels", a.block_channels},
       {"feature_channels", a.feature_channels}, {"head_hidden", a.head_hidden},
       {"use_appearance", a.use_appearance}, {"decoder_leak", a.decoder_leak}};
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) {
  a.latent_dim = j.value("latent_dim", a.latent_dim);
  a.seed_resolution = j.value("seed_resolution", a.seed_resolution);
  a.seed_channels = j.value("seed_channels", a.seed_channels);
  a.block_channels = j.value("block_channels", a.block_channels);
  a.feature_channels = j.value("feature_channels", a.feature_channels);
  a.head_hidden = j.value("head_hidden", a.head_hidden);
  a.use_appearance = j.value("use_appearance", a.use_appearance);
  a.decoder_leak = j.value("decoder_leak", a.decoder_leak);
  a.validate();
}

template <class T>
struct TensorRef {
  std::string name;
  std::vector<std::int64_t> shape;
  std::span<T> data;
};

/// Trainable tensors of the decoder f and the head g.
template <class T>
struct ModelParams {
  RowMat<T> seed_w;
  Vec<T> seed_b;
  std::vector<RowMat<T>> conv_w;
  std::vector<Vec<T>> conv_b;
  std::vector<RowMat<T>> proj_w;
  std::vector<Vec<T>> proj_b;
  std::vector<RowMat<T>> head_w;
  std::vector<Vec<T>> head_b;

  static ModelParams zeros(const ArchConfig& a) {
    a.validate();
    ModelParams p;
    const std::int64_t r0 = a.seed_resolution;
    const std::int64_t seed_rows = r0 * r0 * r0 * a.seed_channels;
    p.seed_w = RowMat<T>::Zero(seed_rows, a.latent_dim);
    p.seed_b = Vec<T>::Zero(seed_rows);
    for (std::size_t i = 0; i < a.block_channels.size(); ++i) {
      const int cin = a.level_channels(static_cast<int>(i)), cout = a.block_channels[i];
      p.conv_w.push_back(RowMat<T>::Zero(cout, 27 * cin));
      p.conv_b.push_back(Vec<T>::Zero(cout));
    }
    for (int l = 0; l < a.levels(); ++l) {
      p.proj_w.push_back(RowMat<T>::Zero(a.feature_channels, a.level_channels(l)));
      p.proj_b.push_back(Vec<T>::Zero(a.feature_channels));
    }
    int in = a.head_input_width();
    for (int h : a.head_hidden) {
      p.head_w.push_back(RowMat<T>::Zero(h, in));
      p.head_b.push_back(Vec<T>::Zero(h));
      in = h;
    }
    p.head_w.push_back(RowMat<T>::Zero(1, in));
    p.head_b.push_back(Vec<T>::Zero(1));
    return p;
  }

  /// Every tensor with its checkpoint name and logical shape, in a fixed order.
  template <class Self>
  static auto tensors_of(Self& self, const ArchConfig& a) {
    using U = std::conditional_t<std::is_const_v<Self>, const T, T>;
    std::vector<TensorRef<U>> out;
    auto add = [&](std::string name, std::vector<std::int64_t> shape, auto& m) {
      out.push_back({std::move(name), std::move(shape), std::span<U>(m.data(), static_cast<std::size_t>(m.size()))});
    };
    const std::int64_t r0 = a.seed_resolution;
    add("decoder.seed.weight", {r0, r0, r0, a.seed_channels, a.latent_dim}, self.seed_w);
    add("decoder.seed.bias", {r0, r0, r0, a.seed_channels}, self.seed_b);
    for (std::size_t i = 0; i < self.conv_w.size(); ++i) {
      const std::string n = "decoder.block" + std::to_string(i) + ".conv";
      add(n + ".weight", {a.block_channels[i], 3, 3, 3, a.level_channels(static_cast<int>(i))}, self.conv_w[i]);
      add(n + ".bias", {a.block_channels[i]}, self.conv_b[i]);
    }
    for (std::size_t i = 0; i < self.proj_w.size(); ++i) {
      const std::string n = "decoder.proj" + std::to_string(i);
      add(n + ".weight", {self.proj_w[i].rows(), self.proj_w[i].cols()}, self.proj_w[i]);
      add(n + ".bias", {self.proj_b[i].rows()}, self.proj_b[i]);
    }
    for (std::size_t j = 0; j < self.head_w.size(); ++j) {
      const std::string n = "head.layer" + std::to_string(j);
      add(n + ".weight", {self.head_w[j].rows(), self.head_w[j].cols()}, self.head_w[j]);
      add(n + ".bias", {self.head_b[j].rows()}, self.head_b[j]);
    }
    return out;
  }
  std::vector<TensorRef<T>> tensors(const ArchConfig& a) { return tensors_of(*this, a); }
  std::vector<TensorRef<const T>> tensors(const ArchConfig& a) const { return tensors_of(*this, a); }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> p;
    p.seed_w = seed_w.template cast<U>();
    p.seed_b = seed_b.template cast<U>();
    auto each = [](const auto& src, auto& dst) {
      for (const auto& m : src) dst.push_back(m.template cast<U>());
    };
    each(conv_w, p.conv_w);
    each(conv_b, p.conv_b);
    each(proj_w, p.proj_w);
    each(proj_b, p.proj_b);
    each(head_w, p.head_w);
    each(head_b, p.head_b);
    return p;
  }

  bool operator==(const ModelParams& o) const {
    auto eq = [](const auto& a, const auto& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() || a[i] != b[i]) return false;
      return true;
    };
    return seed_w.rows() == o.seed_w.rows() && seed_w.cols() == o.seed_w.cols() && seed_w == o.seed_w &&
           seed_b.size() == o.seed_b.size() && seed_b == o.seed_b && eq(conv_w, o.conv_w) && eq(conv_b, o.conv_b) &&
           eq(proj_w, o.proj_w) && eq(proj_b, o.proj_b) && eq(head_w, o.head_w) && eq(head_b, o.head_b);
  }
};

/// One latent code per training shape, rows keyed by case id.
template <class T>
struct LatentTable {
  RowMat<T> codes;  // N x c
  std::vector<std::string> case_ids;

  std::int64_t size() const { return codes.rows(); }
  int dim() const { return static_cast<int>(codes.cols()); }
  std::int64_t find(std::string_view id) const {
    for (std::size_t i = 0; i < case_ids.size(); ++i)
      if (case_ids[i] == id) return static_cast<std::int64_t>(i);
    return -1;
  }
  Vec<T> code(std::int64_t i) const { return codes.row(i).transpose(); }
  bool operator==(const LatentTable& o) const {
    return case_ids == o.case_ids && codes.rows() == o.codes.rows() && codes.cols() == o.codes.cols() &&
           codes == o.codes;
  }
};

template <class T>
struct NearState {
  ModelParams<T> params;
  LatentTable<T> latents;
};

/// Fan-in scaled uniform weights and biases; latent codes ~ N(0, 0.01^2).
/// Case ids default to "0", "1", ... when none are given.
template <class T>
NearState<T> init_model(const ArchConfig& arch, std::int64_t n_shapes, std::uint64_t seed,
                        std::vector<std::string> case_ids = {}) {
  if (n_shapes < 1) throw InvalidArgument("init_model needs at least one shape");
  if (!case_ids.empty() && static_cast<std::int64_t>(case_ids.size()) != n_shapes)
    throw InvalidArgument("init_model: case id count differs from n_shapes");
  Rng rng(seed);
  NearState<T> s;
  s.params = ModelParams<T>::zeros(arch);
  auto fill = [&](auto& w, auto& b, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<T>(u(rng));
  };
  fill(s.params.seed_w, s.params.seed_b, arch.latent_dim);
  for (std::size_t i = 0; i < s.params.conv_w.size(); ++i)
    fill(s.params.conv_w[i], s.params.conv_b[i], 27.0 * static_cast<double>(s.params.conv_w[i].cols() / 27));
  for (std::size_t i = 0; i < s.params.proj_w.size(); ++i)
    fill(s.params.proj_w[i], s.params.proj_b[i], static_cast<double>(s.params.proj_w[i].cols()));
  for (std::size_t j = 0; j < s.params.head_w.size(); ++j)
    fill(s.params.head_w[j], s.params.head_b[j], static_cast<double>(s.params.head_w[j].cols()));

  s.latents.codes.resize(n_shapes, arch.latent_dim);
  std::normal_distribution<double> n(0.0, 0.01);
  for (Eigen::Index i = 0; i < s.latents.codes.size(); ++i) s.latents.codes.data()[i] = static_cast<T>(n(rng));
  if (case_ids.empty())
    for (std::int64_t i = 0; i < n_shapes; ++i) case_ids.push_back(std::to_string(i));
  s.latents.case_ids = std::move(case_ids);
  return s;
}

/// Multi-scale feature grids decoded from one latent code.
template <class T>
struct FeaturePyramid {
  std::vector<ColMat<T>> grids;  // k x R^3 each
  std::vector<std::int64_t> resolution;
};

/// Post-activation decoder outputs, kept for the backward pass.
template <class T>
struct DecoderTrace {
  Vec<T> z;
  std::vector<ColMat<T>> level;  // level[0]: seed (C0 x R0^3); level[i+1]: block i output
};

namespace detail {

// Nearest-neighbour 2x upsampling followed by a 3^3 "same" convolution equals,
// for each of the 8 output parities, a 2^3 convolution on the low-resolution
// grid. kFold[p][a] lists the original taps (0,1,2 for offsets -1,0,+1) that
// fold onto effective tap a for parity p; -1 means none. The low-resolution
// offset of effective tap a is a - 1 + p.
inline constexpr int kFold[2][2][2] = {{{0, -1}, {1, 2}}, {{0, 1}, {2, -1}}};

inline constexpr int bit(int v, int k) { return (v >> k) & 1; }

template <class F>
void for_each_fold(int parity, F&& f) {
  const int pd = bit(parity, 2), ph = bit(parity, 1), pw = bit(parity, 0);
  for (int a = 0; a < 8; ++a)
    for (int td : kFold[pd][bit(a, 2)])
      for (int th : kFold[ph][bit(a, 1)])
        for (int tw : kFold[pw][bit(a, 0)])
          if (td >= 0 && th >= 0 && tw >= 0) f(a, td * 9 + th * 3 + tw);
}

template <class T>
RowMat<T> fold_kernel(const RowMat<T>& w, int cin, int parity) {
  RowMat<T> e = RowMat<T>::Zero(w.rows(), 8 * cin);
  for_each_fold(parity, [&](int a, int t) { e.middleCols(a * cin, cin) += w.middleCols(t * cin, cin); });
  return e;
}

template <class T>
void unfold_kernel_grad(const RowMat<T>& de, int cin, int parity, RowMat<T>& dw) {
  for_each_fold(parity, [&](int a, int t) { dw.middleCols(t * cin, cin) += de.middleCols(a * cin, cin); });
}

// Zero-padded copy of a low-resolution grid: x (c x r^3) -> c x (r+2)^3.
// Every 2^3 effective tap then reads a contiguous column range shifted by a
// constant, so each tap is a single GEMM. Columns that fall on padding
// positions produce values that are ignored (forward) or must be zero (backward).
struct PaddedGeometry {
  std::int64_t r, p;    // low resolution and padded extent r+2
  std::int64_t first;   // padded index of voxel (0,0,0)
  std::int64_t length;  // padded columns spanning voxel (0,0,0) .. (r-1,r-1,r-1)

  explicit PaddedGeometry(std::int64_t res) : r(res), p(res + 2) {
    first = (p + 1) * p + 1;
    length = ((r * p + r) * p + r) - first + 1;
  }
  std::int64_t padded(std::int64_t q) const {
    const std::int64_t d = q / (r * r), h = (q / r) % r, w = q % r;
    return ((d + 1) * p + (h + 1)) * p + (w + 1);
  }
  // Column shift of effective tap a for output parity `parity`.
  std::int64_t shift(int a, int parity) const {
    const std::int64_t od = bit(a, 2) - 1 + bit(parity, 2), oh = bit(a, 1) - 1 + bit(parity, 1),
                       ow = bit(a, 0) - 1 + bit(parity, 0);
    return (od * p + oh) * p + ow;
  }
};

template <class T>
void pad_grid(const ColMat<T>& x, const PaddedGeometry& g, ColMat<T>& out) {
  out.setZero(x.rows(), g.p * g.p * g.p);
  for (std::int64_t q = 0; q < g.r * g.r * g.r; ++q) out.col(g.padded(q)) = x.col(q);
}

// High-resolution voxel index of parity `parity` for low-resolution voxel q.
inline std::int64_t parity_voxel(std::int64_t q, std::int64_t r, int parity) {
  const std::int64_t qd = q / (r * r), qh = (q / r) % r, qw = q % r, n = 2 * r;
  return ((2 * qd + bit(parity, 2)) * n + (2 * qh + bit(parity, 1))) * n + (2 * qw + bit(parity, 0));
}

template <class T>
void leaky_inplace(ColMat<T>& x, T slope) {
  T* p = x.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) p[i] = p[i] > T(0) ? p[i] : slope * p[i];
}

template <class T>
void leaky_backward_inplace(ColMat<T>& grad, const ColMat<T>& out, T slope) {
  T* g = grad.data();
  const T* y = out.data();
  for (Eigen::Index i = 0; i < grad.size(); ++i) g[i] = y[i] > T(0) ? g[i] : slope * g[i];
}

// Forward of one upsample+conv block: x (cin x r^3) -> y (cout x (2r)^3).
template <class T>
ColMat<T> conv_block_forward(const RowMat<T>& w, const Vec<T>& b, const ColMat<T>& x, std::int64_t r, T slope,
                             int threads) {
  const auto cin = x.rows(), cout = w.rows();
  const PaddedGeometry g(r);
  ColMat<T> xpad;
  pad_grid(x, g, xpad);
  ColMat<T> y(cout, 8 * r * r * r);
  parallel_for(8, threads, [&](std::int64_t parity) {
    const int par = static_cast<int>(parity);
    const RowMat<T> e = fold_kernel(w, static_cast<int>(cin), par);
    ColMat<T> yp = ColMat<T>::Zero(cout, g.length);
    for (int a = 0; a < 8; ++a)
      yp.noalias() += e.middleCols(a * cin, cin) * xpad.middleCols(g.first + g.shift(a, par), g.length);
    for (std::int64_t q = 0; q < r * r * r; ++q) y.col(parity_voxel(q, r, par)) = yp.col(g.padded(q) - g.first) + b;
  });
  leaky_inplace(y, slope);
  return y;
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

/// f(z): latent code to feature pyramid. Pass `trace` to keep the
/// intermediates needed for the backward pass.
template <class T>
FeaturePyramid<T> decode_features(const ArchConfig& arch, const ModelParams<T>& p, const Vec<T>& z,
                                  std::type_identity_t<DecoderTrace<T>>* trace = nullptr, int threads = 1) {
  if (z.size() != arch.latent_dim)
    throw ShapeMismatch("latent code has dimension " + std::to_string(z.size()) + ", expected " +
                        std::to_string(arch.latent_dim));
  const T slope = static_cast<T>(arch.decoder_leak);
  const std::int64_t r0 = arch.seed_resolution;
  DecoderTrace<T> local;
  DecoderTrace<T>& tr = trace ? *trace : local;
  tr.z = z;
  tr.level.clear();

  Vec<T> seed = p.seed_w * z + p.seed_b;
  ColMat<T> x = Eigen::Map<ColMat<T>>(seed.data(), arch.seed_channels, r0 * r0 * r0);
  detail::leaky_inplace(x, slope);
  tr.level.push_back(std::move(x));
  for (std::size_t i = 0; i < p.conv_w.size(); ++i) {
    const std::int64_t r = arch.level_resolution(static_cast<int>(i));
    tr.level.push_back(detail::conv_block_forward(p.conv_w[i], p.conv_b[i], tr.level.back(), r, slope, threads));
  }

  FeaturePyramid<T> pyr;
  for (int l = 0; l < arch.levels(); ++l) {
    ColMat<T> f = p.proj_w[l] * tr.level[l];
    f.colwise() += p.proj_b[l];
    pyr.grids.push_back(std::move(f));
    pyr.resolution.push_back(arch.level_resolution(l));
  }
  return pyr;
}

/// Head intermediates for one chunk of query points.
template <class T>
struct HeadChunkTrace {
  std::int64_t begin = 0;
  ColMat<T> input;               // head input, one column per point
  std::vector<ColMat<T>> hidden;  // post-ReLU activations of hidden layers
  RowVec<T> logit;
};

struct Exec {
  int threads = 1;
  std::int64_t chunk = 2048;  // points per head chunk; fixes the reduction topology
};

namespace detail {

template <class T>
void build_head_input(const ArchConfig& arch, const FeaturePyramid<T>& pyr, std::span<const NormalizedPoint> pts,
                      std::span<const float> appearance, ColMat<T>& in) {
  const int k = arch.feature_channels;
  in.resize(arch.head_input_width(), static_cast<Eigen::Index>(pts.size()));
  for (std::size_t j = 0; j < pts.size(); ++j) {
    T* col = in.data() + j * in.rows();
    col[0] = static_cast<T>(pts[j].x);
    col[1] = static_cast<T>(pts[j].y);
    col[2] = static_cast<T>(pts[j].z);
    for (std::size_t l = 0; l < pyr.grids.size(); ++l) {
      const std::int64_t r = pyr.resolution[l];
      const auto st = trilinear_stencil<T>(cube(r), pts[j]);
      T* dst = col + 3 + l * k;
      std::fill(dst, dst + k, T(0));
      for (int c = 0; c < 8; ++c) {
        const T* src = pyr.grids[l].data() + st.index[c] * k;
        const T wgt = st.weight[c];
        for (int ch = 0; ch < k; ++ch) dst[ch] += wgt * src[ch];
      }
    }
    if (arch.use_appearance) col[3 + arch.levels() * k] = static_cast<T>(appearance[j]);
  }
}

template <class T>
void head_forward(const ModelParams<T>& p, HeadChunkTrace<T>& tr) {
  const ColMat<T>* h = &tr.input;
  tr.hidden.clear();
  for (std::size_t j = 0; j + 1 < p.head_w.size(); ++j) {
    ColMat<T> a = p.head_w[j] * (*h);
    a.colwise() += p.head_b[j];
    a = a.cwiseMax(T(0));
    tr.hidden.push_back(std::move(a));
    h = &tr.hidden.back();
  }
  tr.logit = p.head_w.back() * (*h);
  tr.logit.array() += p.head_b.back()(0);
}

}  // namespace detail

inline void check_query_inputs(const ArchConfig& arch, std::span<const NormalizedPoint> pts,
                               std::span<const float> appearance) {
  if (arch.use_appearance && appearance.size() != pts.size())
    throw ShapeMismatch("query: appearance count differs from point count");
}

/// Pre-sigmoid head outputs for a batch of points, evaluated in fixed chunks.
template <class T>
std::vector<HeadChunkTrace<T>> query_traced(const ArchConfig& arch, const ModelParams<T>& p,
                                            const FeaturePyramid<T>& pyr, std::span<const NormalizedPoint> pts,
                                            std::span<const float> appearance, const Exec& exec = {}) {
  check_query_inputs(arch, pts, appearance);
  const auto n = static_cast<std::int64_t>(pts.size());
  const std::int64_t chunks = (n + exec.chunk - 1) / exec.chunk;
  std::vector<HeadChunkTrace<T>> out(static_cast<std::size_t>(chunks));
  parallel_for(chunks, exec.threads, [&](std::int64_t c) {
    const std::int64_t b = c * exec.chunk, e = std::min(n, b + exec.chunk);
    auto& tr = out[c];
    tr.begin = b;
    detail::build_head_input(arch, pyr, pts.subspan(b, e - b),
                             arch.use_appearance ? appearance.subspan(b, e - b) : appearance, tr.input);
    detail::head_forward(p, tr);
  });
  return out;
}

/// Pre-sigmoid head outputs; chunk intermediates are discarded as they complete.
template <class T>
std::vector<T> query_logits(const ArchConfig& arch, const ModelParams<T>& p, const FeaturePyramid<T>& pyr,
                            std::span<const NormalizedPoint> pts, std::span<const float> appearance,
                            const Exec& exec = {}) {
  check_query_inputs(arch, pts, appearance);
  const auto n = static_cast<std::int64_t>(pts.size());
  std::vector<T> out(pts.size());
  parallel_for((n + exec.chunk - 1) / exec.chunk, exec.threads, [&](std::int64_t c) {
    const std::int64_t b = c * exec.chunk, e = std::min(n, b + exec.chunk);
    HeadChunkTrace<T> tr;
    detail::build_head_input(arch, pyr, pts.subspan(b, e - b),
                             arch.use_appearance ? appearance.subspan(b, e - b) : appearance, tr.input);
    detail::head_forward(p, tr);
    std::copy(tr.logit.data(), tr.logit.data() + tr.logit.size(), out.begin() + b);
  });
  return out;
}

/// Occupancy probabilities g(p, F(p), a) in input order.
template <class T>
std::vector<T> query(const ArchConfig& arch, const ModelParams<T>& p, const FeaturePyramid<T>& pyr,
                     std::span<const NormalizedPoint> pts, std::span<const float> appearance, const Exec& exec = {}) {
  std::vector<T> out = query_logits(arch, p, pyr, pts, appearance, exec);
  for (auto& v : out) v = detail::sigmoid(v);
  return out;
}

template <class T>
std::vector<T> query(const ArchConfig& arch, const ModelParams<T>& p, const Vec<T>& z,
                     std::span<const NormalizedPoint> pts, std::span<const float> appearance, const Exec& exec = {}) {
  return query(arch, p, decode_features(arch, p, z, nullptr, exec.threads), pts, appearance, exec);
}

// ---------------------------------------------------------------------------
// Loss

struct LossConfig {
  double lambda = 0.01;
  bool squared_norm = false;  // lambda*||z||^2 instead of lambda*||z||
};

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy (probabilities clamped to [1e-7, 1-1e-7]) plus
/// lambda times the Euclidean norm of z.
template <class T>
double loss(std::span<const T> prob, std::span<const float> labels, const Vec<T>& z, const LossConfig& cfg) {
  if (prob.size() != labels.size()) throw ShapeMismatch("loss: probability and label counts differ");
  if (prob.empty()) throw InvalidArgument("loss over an empty batch");
  double bce = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double o = std::clamp(static_cast<double>(prob[i]), kProbClamp, 1.0 - kProbClamp);
    bce -= labels[i] != 0.0f ? std::log(o) : std::log1p(-o);
  }
  bce /= static_cast<double>(prob.size());
  double sq = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) sq += static_cast<double>(z(i)) * static_cast<double>(z(i));
  return bce + cfg.lambda * (cfg.squared_norm ? sq : std::sqrt(sq));
}

}  // namespace near
