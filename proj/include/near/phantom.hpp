#pragma once

// Synthetic (image, mask) cases: a smooth blob built from a few overlapping,
// randomly rotated ellipsoids, and a CT-like intensity volume whose contrast
// follows the blob boundary. Intensities are generated in HU and windowed.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "near/edt.hpp"
#include "near/error.hpp"
#include "near/morphology.hpp"
#include "near/parallel.hpp"
#include "near/sampling.hpp"
#include "near/volume.hpp"

namespace near {

struct PhantomConfig {
  std::int64_t resolution = 64;
  int min_blobs = 2;
  int max_blobs = 4;
  // Semi-axis ranges as fractions of the resolution: long, middle, short.
  std::array<double, 2> long_axis{0.18, 0.28};
  std::array<double, 2> mid_axis{0.11, 0.16};
  std::array<double, 2> short_axis{0.08, 0.12};
  double inside_hu = 90.0;
  double outside_hu = 0.0;
  double edge_width_mm = 0.8;  // scale of the logistic intensity ramp across the boundary
  double noise_hu = 14.0;
  std::array<double, 2> window_hu{-60.0, 140.0};
  std::int64_t border_margin = 3;  // voxels kept free of foreground at the grid border

  void validate() const {
    if (resolution < 8) throw InvalidArgument("phantom resolution must be at least 8");
    if (min_blobs < 1 || max_blobs < min_blobs) throw InvalidArgument("invalid phantom blob count range");
    for (const auto& r : {long_axis, mid_axis, short_axis})
      if (!(r[0] > 0 && r[0] <= r[1] && r[1] < 0.5)) throw InvalidArgument("invalid phantom axis range");
    if (!(edge_width_mm > 0) || noise_hu < 0) throw InvalidArgument("invalid phantom intensity settings");
    if (!(window_hu[0] < window_hu[1])) throw InvalidArgument("invalid phantom window");
  }
};

inline void to_json(nlohmann::json& j, const PhantomConfig& c) {
  j = {{"resolution", c.resolution}, {"min_blobs", c.min_blobs},     {"max_blobs", c.max_blobs},
       {"long_axis", c.long_axis},   {"mid_axis", c.mid_axis},       {"short_axis", c.short_axis},
       {"inside_hu", c.inside_hu},   {"outside_hu", c.outside_hu},   {"edge_width_mm", c.edge_width_mm},
       {"noise_hu", c.noise_hu},     {"window_hu", c.window_hu},     {"border_margin", c.border_margin}};
}

inline void from_json(const nlohmann::json& j, PhantomConfig& c) {
  c.resolution = j.value("resolution", c.resolution);
  c.min_blobs = j.value("min_blobs", c.min_blobs);
  c.max_blobs = j.value("max_blobs", c.max_blobs);
  c.long_axis = j.value("long_axis", c.long_axis);
  c.mid_axis = j.value("mid_axis", c.mid_axis);
  c.short_axis = j.value("short_axis", c.short_axis);
  c.inside_hu = j.value("inside_hu", c.inside_hu);
  c.outside_hu = j.value("outside_hu", c.outside_hu);
  c.edge_width_mm = j.value("edge_width_mm", c.edge_width_mm);
  c.noise_hu = j.value("noise_hu", c.noise_hu);
  c.window_hu = j.value("window_hu", c.window_hu);
  c.border_margin = j.value("border_margin", c.border_margin);
  c.validate();
}

struct Phantom {
  std::string case_id;
  VolumeGrid appearance;  // windowed to [0,1]
  VolumeGrid mask;        // gold standard
};

inline std::string phantom_case_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", i);
  return buf;
}

namespace detail {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<std::array<double, 3>, 3> axes;  // rows: unit directions
  std::array<double, 3> radii;

  bool contains(double d, double h, double w) const {
    const double v[3] = {d - center[0], h - center[1], w - center[2]};
    double s = 0;
    for (int k = 0; k < 3; ++k) {
      const double proj = axes[k][0] * v[0] + axes[k][1] * v[1] + axes[k][2] * v[2];
      s += (proj / radii[k]) * (proj / radii[k]);
    }
    return s <= 1.0;
  }
};

// Rotation matrix rows from a uniformly random unit quaternion.
inline std::array<std::array<double, 3>, 3> random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double q[4];
  double len = 0;
  do {
    len = 0;
    for (double& v : q) {
      v = n(rng);
      len += v * v;
    }
  } while (len < 1e-12);
  len = std::sqrt(len);
  for (double& v : q) v /= len;
  const double a = q[0], b = q[1], c = q[2], d = q[3];
  return {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
           {2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)},
           {2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d}}};
}

inline bool touches_border(const VolumeGrid& m, std::int64_t margin) {
  Index3 lo, hi;
  if (!foreground_bbox(m, lo, hi)) return true;
  const Shape3& s = m.shape();
  return lo[0] < margin || lo[1] < margin || lo[2] < margin || hi[0] >= s.d - margin || hi[1] >= s.h - margin ||
         hi[2] >= s.w - margin;
}

inline VolumeGrid blob_mask(const PhantomConfig& cfg, Rng& rng) {
  const auto n = static_cast<double>(cfg.resolution);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const std::array<double, 2>& r) { return n * (r[0] + (r[1] - r[0]) * u(rng)); };
  for (;;) {
    const int count = std::uniform_int_distribution<int>(cfg.min_blobs, cfg.max_blobs)(rng);
    std::vector<Ellipsoid> parts;
    for (int k = 0; k < count; ++k) {
      Ellipsoid e;
      e.axes = random_rotation(rng);
      e.radii = {draw(cfg.long_axis), draw(cfg.mid_axis), draw(cfg.short_axis)};
      if (parts.empty()) {
        const double c = (n - 1) / 2;
        for (double& v : e.center) v = c + n * 0.06 * (2 * u(rng) - 1);
      } else {
        // anchor inside an earlier ellipsoid so the union stays connected
        const Ellipsoid& host = parts[std::uniform_int_distribution<std::size_t>(0, parts.size() - 1)(rng)];
        const double t = 0.6 * (2 * u(rng) - 1);
        e.center = host.center;
        for (int a = 0; a < 3; ++a) e.center[a] += t * host.radii[0] * host.axes[0][a];
      }
      parts.push_back(e);
    }
    VolumeGrid m = VolumeGrid::mask(cube(cfg.resolution));
    for (std::int64_t d = 0; d < cfg.resolution; ++d)
      for (std::int64_t h = 0; h < cfg.resolution; ++h)
        for (std::int64_t w = 0; w < cfg.resolution; ++w)
          for (const auto& e : parts)
            if (e.contains(static_cast<double>(d), static_cast<double>(h), static_cast<double>(w))) {
              m(d, h, w) = 1.0f;
              break;
            }
    m = connected_components(m, KeepLargest{});
    if (!touches_border(m, cfg.border_margin)) return m;
  }
}

}  // namespace detail

/// One phantom, a pure function of (cfg, seed).
inline Phantom make_phantom(const PhantomConfig& cfg, std::string case_id, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Phantom ph;
  ph.case_id = std::move(case_id);
  ph.mask = detail::blob_mask(cfg, rng);

  // signed distance to the boundary surface, positive inside
  const std::vector<double> to_fg = edt_squared(ph.mask);
  const std::vector<double> to_bg = edt_squared(complement(ph.mask));
  VolumeGrid raw(ph.mask.shape(), ph.mask.spacing(), Kind::Intensity);
  std::normal_distribution<double> noise(0.0, cfg.noise_hu);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double sd = ph.mask[i] != 0.0f ? std::sqrt(to_bg[i]) - 0.5 : 0.5 - std::sqrt(to_fg[i]);
    const double ramp = 1.0 / (1.0 + std::exp(-sd / cfg.edge_width_mm));
    raw[i] = static_cast<float>(cfg.outside_hu + (cfg.inside_hu - cfg.outside_hu) * ramp + noise(rng));
  }
  ph.appearance = window_normalize(raw, cfg.window_hu[0], cfg.window_hu[1]);
  return ph;
}

/// n phantoms with ids case_000.. and per-case seeds derived from `seed`.
inline std::vector<Phantom> make_phantoms(int n, const PhantomConfig& cfg, std::uint64_t seed, int threads = 1) {
  if (n < 1) throw InvalidArgument("make_phantoms needs n >= 1");
  std::vector<Phantom> out(static_cast<std::size_t>(n));
  parallel_for(n, threads, [&](std::int64_t i) {
    const std::string id = phantom_case_id(static_cast<int>(i));
    out[i] = make_phantom(cfg, id, derive_seed(seed, id));
  });
  return out;
}

/// Mean appearance inside the mask minus mean appearance outside it.
inline double appearance_contrast(const Phantom& ph) {
  double in = 0, out = 0;
  std::int64_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < ph.mask.size(); ++i) {
    if (ph.mask[i] != 0.0f) {
      in += ph.appearance[i];
      ++n_in;
    } else {
      out += ph.appearance[i];
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) return 0;
  return in / static_cast<double>(n_in) - out / static_cast<double>(n_out);
}

}  // namespace near
