#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "near/error.hpp"
#include "near/metrics.hpp"
#include "near/morphology.hpp"
#include "near/sampling.hpp"
#include "near/volume.hpp"

namespace near {

struct IntRange {
  int lo = 0, hi = 0;  // inclusive
  bool operator==(const IntRange&) const = default;
};

/// Parameters of the annotation-corruption recipe. Defaults land in the
/// [0.65, 0.75] Dice band on the bundled phantoms.
struct DistortionConfig {
  IntRange n_cubes_range{3, 8};
  IntRange cube_side_range{4, 12};
  double p_add = 0.5;
  std::vector<int> morph_radius_choices{1, 2};
  double p_dilate = 0.5;
  double salt_pepper_density = 0.001;
  std::pair<double, double> dice_band{0.65, 0.75};
  int max_attempts = 100;

  void validate() const {
    if (n_cubes_range.lo < 0 || n_cubes_range.hi < n_cubes_range.lo) throw InvalidArgument("bad n_cubes_range");
    if (cube_side_range.lo < 1 || cube_side_range.hi < cube_side_range.lo) throw InvalidArgument("bad cube_side_range");
    if (p_add < 0 || p_add > 1 || p_dilate < 0 || p_dilate > 1) throw InvalidArgument("probabilities must be in [0,1]");
    for (int r : morph_radius_choices)
      if (r < 1) throw InvalidArgument("morph radii must be at least 1");
    if (salt_pepper_density < 0 || salt_pepper_density > 1) throw InvalidArgument("density must be in [0,1]");
    if (!(dice_band.first >= 0 && dice_band.first < dice_band.second && dice_band.second <= 1))
      throw InvalidArgument("dice_band must satisfy 0 <= lo < hi <= 1");
    if (max_attempts < 1) throw InvalidArgument("max_attempts must be at least 1");
  }
  bool operator==(const DistortionConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DistortionConfig& c) {
  j = {{"n_cubes_range", {c.n_cubes_range.lo, c.n_cubes_range.hi}},
       {"cube_side_range", {c.cube_side_range.lo, c.cube_side_range.hi}},
       {"p_add", c.p_add},
       {"morph_radius_choices", c.morph_radius_choices},
       {"p_dilate", c.p_dilate},
       {"salt_pepper_density", c.salt_pepper_density},
       {"dice_band", {c.dice_band.first, c.dice_band.second}},
       {"max_attempts", c.max_attempts}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, DistortionConfig& c) {
  auto range = [&](const char* key, IntRange& r) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<int>>();
    if (v.size() != 2) throw InvalidArgument(std::string(key) + " needs [lo, hi]");
    r = {v[0], v[1]};
  };
  range("n_cubes_range", c.n_cubes_range);
  range("cube_side_range", c.cube_side_range);
  if (j.contains("p_add")) c.p_add = j.at("p_add").get<double>();
  if (j.contains("morph_radius_choices")) c.morph_radius_choices = j.at("morph_radius_choices").get<std::vector<int>>();
  if (j.contains("p_dilate")) c.p_dilate = j.at("p_dilate").get<double>();
  if (j.contains("salt_pepper_density")) c.salt_pepper_density = j.at("salt_pepper_density").get<double>();
  if (j.contains("dice_band")) {
    const auto v = j.at("dice_band").get<std::vector<double>>();
    if (v.size() != 2) throw InvalidArgument("dice_band needs [lo, hi]");
    c.dice_band = {v[0], v[1]};
  }
  if (j.contains("max_attempts")) c.max_attempts = j.at("max_attempts").get<int>();
  c.validate();
}

/// Rejection sampling gave up; carries the attempt whose Dice came closest to the band.
class BandUnreachable : public Error {
 public:
  BandUnreachable(VolumeGrid best, double best_dice)
      : Error("dice band unreachable; closest attempt scored " + std::to_string(best_dice)),
        best_(std::move(best)),
        best_dice_(best_dice) {}
  const VolumeGrid& best_attempt() const { return best_; }
  double best_dice() const { return best_dice_; }

 private:
  VolumeGrid best_;
  double best_dice_;
};

/// Adds or cuts axis-aligned cubes centred on boundary voxels of the input.
inline VolumeGrid add_cut_cubes(const VolumeGrid& mask, const DistortionConfig& cfg, Rng& rng) {
  require_mask(mask, "add_cut_cubes");
  const VolumeGrid edge = boundary(mask);
  std::vector<std::int64_t> candidates;
  for (std::size_t i = 0; i < edge.size(); ++i)
    if (edge[i] != 0.0f) candidates.push_back(static_cast<std::int64_t>(i));
  if (candidates.empty()) throw NoForeground("add_cut_cubes: mask has no foreground");

  VolumeGrid out = mask;
  const int n = std::uniform_int_distribution<int>(cfg.n_cubes_range.lo, cfg.n_cubes_range.hi)(rng);
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  std::uniform_int_distribution<int> side_dist(cfg.cube_side_range.lo, cfg.cube_side_range.hi);
  std::bernoulli_distribution add(cfg.p_add);
  for (int k = 0; k < n; ++k) {
    const Index3 c = mask.coords(candidates[pick(rng)]);
    const int side = side_dist(rng);
    const float value = add(rng) ? 1.0f : 0.0f;
    const std::int64_t half = side / 2;
    for (std::int64_t d = c[0] - half; d < c[0] - half + side; ++d)
      for (std::int64_t h = c[1] - half; h < c[1] - half + side; ++h)
        for (std::int64_t w = c[2] - half; w < c[2] - half + side; ++w)
          if (out.contains(d, h, w)) out(d, h, w) = value;
  }
  return out;
}

/// Flips each voxel of the foreground bounding box (padded by 4 voxels,
/// clipped to the grid) with probability `density`.
inline VolumeGrid salt_pepper(const VolumeGrid& mask, double density, Rng& rng) {
  require_mask(mask, "salt_pepper");
  if (density < 0 || density > 1) throw InvalidArgument("salt_pepper density must be in [0,1]");
  VolumeGrid out = mask;
  Index3 lo, hi;
  if (density == 0 || !foreground_bbox(mask, lo, hi)) return out;
  constexpr std::int64_t pad = 4;
  const Shape3 s = mask.shape();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::int64_t d = std::max<std::int64_t>(lo[0] - pad, 0); d <= std::min(hi[0] + pad, s.d - 1); ++d)
    for (std::int64_t h = std::max<std::int64_t>(lo[1] - pad, 0); h <= std::min(hi[1] + pad, s.h - 1); ++h)
      for (std::int64_t w = std::max<std::int64_t>(lo[2] - pad, 0); w <= std::min(hi[2] + pad, s.w - 1); ++w)
        if (u(rng) < density) out(d, h, w) = out(d, h, w) != 0.0f ? 0.0f : 1.0f;
  return out;
}

struct DistortionResult {
  VolumeGrid mask;
  double dice = 0;
  int attempts = 0;
};

/// One draw of the full corruption pipeline: cubes, one global dilation or
/// erosion, then salt-and-pepper noise.
inline VolumeGrid distort_once(const VolumeGrid& mask, const DistortionConfig& cfg, Rng& rng) {
  VolumeGrid out = add_cut_cubes(mask, cfg, rng);
  if (!cfg.morph_radius_choices.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, cfg.morph_radius_choices.size() - 1);
    const int r = cfg.morph_radius_choices[pick(rng)];
    out = std::bernoulli_distribution(cfg.p_dilate)(rng) ? dilate(out, r) : erode(out, r);
  }
  return salt_pepper(out, cfg.salt_pepper_density, rng);
}

/// Redraws the whole pipeline until the Dice against the input falls inside
/// cfg.dice_band (inclusive).
inline DistortionResult synthesize_distortion(const VolumeGrid& mask, const DistortionConfig& cfg, Rng& rng) {
  cfg.validate();
  require_mask(mask, "synthesize_distortion");
  if (mask.count_foreground() == 0) throw NoForeground("synthesize_distortion: mask has no foreground");
  const auto [lo, hi] = cfg.dice_band;
  VolumeGrid best;
  double best_dice = 0, best_gap = std::numeric_limits<double>::infinity();
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    VolumeGrid candidate = distort_once(mask, cfg, rng);
    const double d = dsc(candidate, mask);
    if (d >= lo && d <= hi) return {std::move(candidate), d, attempt};
    const double gap = d < lo ? lo - d : d - hi;
    if (gap < best_gap) {
      best_gap = gap;
      best_dice = d;
      best = std::move(candidate);
    }
  }
  throw BandUnreachable(std::move(best), best_dice);
}

}  // namespace near
