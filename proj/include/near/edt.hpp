#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "near/error.hpp"
#include "near/volume.hpp"

namespace near {

namespace detail {

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line of
// n samples spaced `step` mm apart. f is read and written through a stride.
inline void edt_1d(double* f, std::int64_t n, std::int64_t stride, double step, std::vector<double>& buf_f,
                   std::vector<std::int64_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  buf_f.resize(n);
  v.resize(n);
  z.resize(n + 1);
  for (std::int64_t i = 0; i < n; ++i) buf_f[i] = f[i * stride];

  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (buf_f[q] == inf) continue;
    const double xq = static_cast<double>(q) * step;
    while (k >= 0) {
      const double xv = static_cast<double>(v[k]) * step;
      const double s = ((buf_f[q] + xq * xq) - (buf_f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s <= z[k]) {
        --k;
      } else {
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
    }
  }
  if (k < 0) return;  // whole line unreachable; leave infinities in place

  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    const double xq = static_cast<double>(q) * step;
    while (z[j + 1] < xq) ++j;
    const double dx = static_cast<double>(q - v[j]) * step;
    f[q * stride] = dx * dx + buf_f[v[j]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance (mm^2) from every voxel center to the
/// nearest foreground voxel center, honoring anisotropic spacing.
inline std::vector<double> edt_squared(const VolumeGrid& mask) {
  require_mask(mask, "edt");
  if (mask.count_foreground() == 0) throw NoForeground("edt of an empty mask");
  const Shape3 s = mask.shape();
  std::vector<double> f(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    f[i] = mask[i] != 0.0f ? 0.0 : std::numeric_limits<double>::infinity();

  std::vector<double> buf, z;
  std::vector<std::int64_t> v;
  const auto& sp = mask.spacing();
  for (std::int64_t d = 0; d < s.d; ++d)
    for (std::int64_t h = 0; h < s.h; ++h)
      detail::edt_1d(&f[(d * s.h + h) * s.w], s.w, 1, sp[2], buf, v, z);
  for (std::int64_t d = 0; d < s.d; ++d)
    for (std::int64_t w = 0; w < s.w; ++w)
      detail::edt_1d(&f[d * s.h * s.w + w], s.h, s.w, sp[1], buf, v, z);
  for (std::int64_t h = 0; h < s.h; ++h)
    for (std::int64_t w = 0; w < s.w; ++w)
      detail::edt_1d(&f[h * s.w + w], s.d, s.h * s.w, sp[0], buf, v, z);
  return f;
}

/// Euclidean distance transform in millimetres.
inline VolumeGrid edt(const VolumeGrid& mask) {
  const std::vector<double> sq = edt_squared(mask);
  VolumeGrid out(mask.shape(), mask.spacing(), Kind::Distance);
  for (std::size_t i = 0; i < sq.size(); ++i) out[i] = static_cast<float>(std::sqrt(sq[i]));
  return out;
}

}  // namespace near
