#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "near/error.hpp"
#include "near/volume.hpp"

namespace near {

using Rng = std::mt19937_64;

/// Query coordinate in [-1, 1]^3; -1 and +1 sit on the first and last voxel
/// centers. Component 0 runs along the D axis, 1 along H, 2 along W.
struct NormalizedPoint {
  float x = 0, y = 0, z = 0;

  float operator[](int i) const { return i == 0 ? x : i == 1 ? y : z; }
  bool operator==(const NormalizedPoint&) const = default;
};

/// Continuous voxel coordinate of a normalized coordinate on an axis of n voxels.
template <class T>
inline T to_voxel(T p, std::int64_t n) {
  p = std::clamp(p, T(-1), T(1));
  return (p + T(1)) * T(0.5) * static_cast<T>(n - 1);
}

/// The 8 voxels and blend weights of a trilinear lookup. Corner c uses the
/// bits (c>>2, c>>1, c) & 1 as the +1 offsets along (D, H, W).
template <class T>
struct TrilinearStencil {
  std::array<std::int64_t, 8> index{};
  std::array<T, 8> weight{};
};

template <class T>
inline TrilinearStencil<T> trilinear_stencil(const Shape3& shape, const NormalizedPoint& p) {
  std::array<std::int64_t, 3> lo{}, hi{};
  std::array<T, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t n = shape[a];
    const T u = to_voxel<T>(static_cast<T>(p[a]), n);
    std::int64_t i0 = static_cast<std::int64_t>(std::floor(u));
    i0 = std::clamp<std::int64_t>(i0, 0, std::max<std::int64_t>(n - 2, 0));
    lo[a] = i0;
    hi[a] = std::min(i0 + 1, n - 1);
    frac[a] = n > 1 ? u - static_cast<T>(i0) : T(0);
  }
  TrilinearStencil<T> s;
  for (int c = 0; c < 8; ++c) {
    const int bd = (c >> 2) & 1, bh = (c >> 1) & 1, bw = c & 1;
    const std::int64_t d = bd ? hi[0] : lo[0];
    const std::int64_t h = bh ? hi[1] : lo[1];
    const std::int64_t w = bw ? hi[2] : lo[2];
    s.index[c] = (d * shape.h + h) * shape.w + w;
    s.weight[c] = (bd ? frac[0] : T(1) - frac[0]) * (bh ? frac[1] : T(1) - frac[1]) *
                  (bw ? frac[2] : T(1) - frac[2]);
  }
  return s;
}

/// Trilinear blend of the 8 voxel centers around p; p is clamped to [-1,1].
inline float trilinear_sample(const VolumeGrid& grid, const NormalizedPoint& p) {
  if (grid.empty()) throw InvalidArgument("trilinear_sample on an empty grid");
  const auto s = trilinear_stencil<double>(grid.shape(), p);
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) acc += s.weight[c] * static_cast<double>(grid[s.index[c]]);
  return static_cast<float>(acc);
}

/// Voxel index nearest to p after clamping to [-1,1].
inline std::int64_t nearest_voxel(const Shape3& shape, const NormalizedPoint& p) {
  std::array<std::int64_t, 3> i{};
  for (int a = 0; a < 3; ++a) {
    const double u = to_voxel<double>(static_cast<double>(p[a]), shape[a]);
    i[a] = std::clamp<std::int64_t>(std::llround(u), 0, shape[a] - 1);
  }
  return (i[0] * shape.h + i[1]) * shape.w + i[2];
}

inline std::uint8_t nearest_label(const VolumeGrid& mask, const NormalizedPoint& p) {
  require_mask(mask, "nearest_label");
  return mask[nearest_voxel(mask.shape(), p)] != 0.0f ? 1 : 0;
}

/// resolution^3 uniformly spaced points with endpoints at -1 and +1, C order.
inline std::vector<NormalizedPoint> meshgrid(std::int64_t resolution) {
  if (resolution < 2) throw InvalidArgument("meshgrid resolution must be at least 2");
  std::vector<float> axis(static_cast<std::size_t>(resolution));
  for (std::int64_t i = 0; i < resolution; ++i)
    axis[i] = static_cast<float>(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(resolution - 1));
  std::vector<NormalizedPoint> pts;
  pts.reserve(static_cast<std::size_t>(resolution * resolution * resolution));
  for (float x : axis)
    for (float y : axis)
      for (float z : axis) pts.push_back({x, y, z});
  return pts;
}

/// Normalized coordinates of every voxel center of `shape`, C order. Equals
/// meshgrid(n) for an n^3 grid.
inline std::vector<NormalizedPoint> voxel_centers(const Shape3& shape) {
  auto axis = [](std::int64_t n) {
    std::vector<float> a(static_cast<std::size_t>(n), 0.0f);
    for (std::int64_t i = 0; n > 1 && i < n; ++i)
      a[i] = static_cast<float>(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1));
    return a;
  };
  const auto ax = axis(shape.d), ay = axis(shape.h), az = axis(shape.w);
  std::vector<NormalizedPoint> pts;
  pts.reserve(static_cast<std::size_t>(shape.voxels()));
  for (float x : ax)
    for (float y : ay)
      for (float z : az) pts.push_back({x, y, z});
  return pts;
}

/// Adds independent N(0, sigma^2) noise to every coordinate.
inline std::vector<NormalizedPoint> jitter(std::span<const NormalizedPoint> points, double sigma, Rng& rng) {
  if (sigma < 0.0) throw InvalidArgument("jitter sigma must be non-negative");
  std::vector<NormalizedPoint> out(points.begin(), points.end());
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& p : out) {
    p.x = static_cast<float>(p.x + noise(rng));
    p.y = static_cast<float>(p.y + noise(rng));
    p.z = static_cast<float>(p.z + noise(rng));
  }
  return out;
}

}  // namespace near
