#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "near/edt.hpp"
#include "near/error.hpp"
#include "near/morphology.hpp"
#include "near/volume.hpp"

namespace near {

inline constexpr double kDefaultNsdToleranceMm = 1.0;

/// 2|A∩B| / (|A|+|B|); two empty masks score 1.
inline double dsc(const VolumeGrid& a, const VolumeGrid& b) {
  require_same_shape(a, b, "dsc");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0.0f, y = b[i] != 0.0f;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Normalized surface Dice over boundary voxel centers.
///
/// Boundary voxels are foreground voxels with a background 6-neighbour (the
/// grid border counts as background). A boundary voxel of one mask is matched
/// when the other mask's nearest boundary voxel lies within tau_mm. Both masks
/// empty gives 1, exactly one empty gives 0.
inline double nsd(const VolumeGrid& a, const VolumeGrid& b, double tau_mm = kDefaultNsdToleranceMm) {
  require_same_shape(a, b, "nsd");
  if (a.spacing() != b.spacing()) throw ShapeMismatch("nsd: voxel spacings differ");
  if (tau_mm < 0.0) throw InvalidArgument("nsd tolerance must be non-negative");
  const bool ea = a.count_foreground() == 0, eb = b.count_foreground() == 0;
  if (ea && eb) return 1.0;
  if (ea || eb) return 0.0;

  const VolumeGrid sa = boundary(a), sb = boundary(b);
  const std::vector<double> to_b = edt_squared(sb), to_a = edt_squared(sa);
  std::int64_t matched = 0, total = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] != 0.0f) {
      ++total;
      matched += std::sqrt(to_b[i]) <= tau_mm;
    }
    if (sb[i] != 0.0f) {
      ++total;
      matched += std::sqrt(to_a[i]) <= tau_mm;
    }
  }
  return static_cast<double>(matched) / static_cast<double>(total);
}

struct CaseMetrics {
  std::string case_id;
  double dsc = 0;
  double nsd = 0;
};

struct MeanStd {
  double mean = 0;
  double std = 0;  // population
};

struct MetricSummary {
  MeanStd dsc, nsd;
  double tolerance_mm = kDefaultNsdToleranceMm;
  std::size_t cases = 0;
};

inline CaseMetrics evaluate_case(std::string case_id, const VolumeGrid& pred, const VolumeGrid& gold,
                                 double tau_mm = kDefaultNsdToleranceMm) {
  return {std::move(case_id), dsc(pred, gold), nsd(pred, gold, tau_mm)};
}

inline MeanStd mean_std(std::span<const double> xs) {
  if (xs.empty()) throw InvalidArgument("mean of an empty sequence");
  double sum = 0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

inline MetricSummary aggregate(std::span<const CaseMetrics> reports, double tau_mm = kDefaultNsdToleranceMm) {
  if (reports.empty()) throw InvalidArgument("aggregate needs at least one report");
  std::vector<double> d, n;
  for (const auto& r : reports) {
    d.push_back(r.dsc);
    n.push_back(r.nsd);
  }
  return {mean_std(d), mean_std(n), tau_mm, reports.size()};
}

}  // namespace near
