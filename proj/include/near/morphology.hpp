#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "near/error.hpp"
#include "near/volume.hpp"

namespace near {

namespace detail {

inline constexpr int kFaceOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                           {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};

// One step with the radius-1 cross. Voxels outside the grid are background.
inline VolumeGrid cross_step(const VolumeGrid& in, bool grow) {
  VolumeGrid out = in;
  const Shape3 s = in.shape();
  for (std::int64_t d = 0; d < s.d; ++d)
    for (std::int64_t h = 0; h < s.h; ++h)
      for (std::int64_t w = 0; w < s.w; ++w) {
        const bool fg = in(d, h, w) != 0.0f;
        if (grow == fg) continue;  // already at the target state
        for (const auto& o : kFaceOffsets) {
          const std::int64_t nd = d + o[0], nh = h + o[1], nw = w + o[2];
          const bool nfg = in.contains(nd, nh, nw) && in(nd, nh, nw) != 0.0f;
          if (grow ? nfg : !nfg) {
            out(d, h, w) = grow ? 1.0f : 0.0f;
            break;
          }
        }
      }
  return out;
}

inline VolumeGrid pad(const VolumeGrid& m, std::int64_t r) {
  const Shape3 s = m.shape();
  VolumeGrid out({s.d + 2 * r, s.h + 2 * r, s.w + 2 * r}, m.spacing(), m.kind());
  for (std::int64_t d = 0; d < s.d; ++d)
    for (std::int64_t h = 0; h < s.h; ++h)
      for (std::int64_t w = 0; w < s.w; ++w) out(d + r, h + r, w + r) = m(d, h, w);
  return out;
}

inline VolumeGrid unpad(const VolumeGrid& m, const Shape3& s, std::int64_t r) {
  VolumeGrid out(s, m.spacing(), m.kind());
  for (std::int64_t d = 0; d < s.d; ++d)
    for (std::int64_t h = 0; h < s.h; ++h)
      for (std::int64_t w = 0; w < s.w; ++w) out(d, h, w) = m(d + r, h + r, w + r);
  return out;
}

}  // namespace detail

/// Minkowski sum with the 6-connected (L1) ball of the given radius.
inline VolumeGrid dilate(const VolumeGrid& mask, int radius) {
  require_mask(mask, "dilate");
  if (radius < 1) throw InvalidArgument("morphology radius must be at least 1");
  VolumeGrid out = mask;
  for (int i = 0; i < radius; ++i) out = detail::cross_step(out, true);
  return out;
}

/// Minkowski difference with the L1 ball; voxels beyond the grid count as background.
inline VolumeGrid erode(const VolumeGrid& mask, int radius) {
  require_mask(mask, "erode");
  if (radius < 1) throw InvalidArgument("morphology radius must be at least 1");
  VolumeGrid out = mask;
  for (int i = 0; i < radius; ++i) out = detail::cross_step(out, false);
  return out;
}

/// Dilate then erode, computed on a grid padded by `radius` so the result
/// always contains the input.
inline VolumeGrid morphological_close(const VolumeGrid& mask, int radius) {
  require_mask(mask, "morphological_close");
  if (radius < 1) throw InvalidArgument("morphology radius must be at least 1");
  VolumeGrid padded = detail::pad(mask, radius);
  padded = erode(dilate(padded, radius), radius);
  return detail::unpad(padded, mask.shape(), radius);
}

inline VolumeGrid complement(const VolumeGrid& mask) {
  require_mask(mask, "complement");
  VolumeGrid out = mask;
  for (auto& v : out.data()) v = v != 0.0f ? 0.0f : 1.0f;
  return out;
}

/// 6-connected labelling. Labels start at 1 and follow raster order of each
/// component's first voxel; background is 0.
struct ComponentLabels {
  std::vector<std::int32_t> label;
  std::vector<std::int64_t> sizes;  // sizes[l-1] is the size of label l
};

inline ComponentLabels label_components(const VolumeGrid& mask) {
  require_mask(mask, "connected_components");
  const Shape3 s = mask.shape();
  ComponentLabels out;
  out.label.assign(mask.size(), 0);
  std::vector<std::int64_t> queue;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(mask.size()); ++start) {
    if (mask[start] == 0.0f || out.label[start] != 0) continue;
    const auto id = static_cast<std::int32_t>(out.sizes.size() + 1);
    std::int64_t count = 0;
    queue.clear();
    queue.push_back(start);
    out.label[start] = id;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::int64_t v = queue[head];
      ++count;
      const Index3 c = mask.coords(v);
      for (const auto& o : detail::kFaceOffsets) {
        const std::int64_t nd = c[0] + o[0], nh = c[1] + o[1], nw = c[2] + o[2];
        if (!mask.contains(nd, nh, nw)) continue;
        const std::int64_t n = (nd * s.h + nh) * s.w + nw;
        if (mask[n] != 0.0f && out.label[n] == 0) {
          out.label[n] = id;
          queue.push_back(n);
        }
      }
    }
    out.sizes.push_back(count);
  }
  return out;
}

struct KeepLargest {};
struct KeepMinSize {
  std::int64_t min_size = 1;
};
using ComponentFilter = std::variant<KeepLargest, KeepMinSize>;

/// Restricts the foreground to the selected 6-connected components. Size ties
/// for `KeepLargest` go to the component with the smallest first voxel index.
inline VolumeGrid connected_components(const VolumeGrid& mask, ComponentFilter keep = KeepLargest{}) {
  const ComponentLabels cc = label_components(mask);
  std::vector<char> selected(cc.sizes.size() + 1, 0);
  if (std::holds_alternative<KeepLargest>(keep)) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < cc.sizes.size(); ++i)
      if (cc.sizes[i] > cc.sizes[best]) best = i;
    if (!cc.sizes.empty()) selected[best + 1] = 1;
  } else {
    const auto k = std::get<KeepMinSize>(keep).min_size;
    for (std::size_t i = 0; i < cc.sizes.size(); ++i) selected[i + 1] = cc.sizes[i] >= k;
  }
  VolumeGrid out(mask.shape(), mask.spacing(), Kind::Mask);
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = selected[cc.label[i]] ? 1.0f : 0.0f;
  return out;
}

/// Foreground voxels with at least one 6-neighbour in the background; the
/// grid border counts as background.
inline VolumeGrid boundary(const VolumeGrid& mask) {
  require_mask(mask, "boundary");
  VolumeGrid out(mask.shape(), mask.spacing(), Kind::Mask);
  const Shape3 s = mask.shape();
  for (std::int64_t d = 0; d < s.d; ++d)
    for (std::int64_t h = 0; h < s.h; ++h)
      for (std::int64_t w = 0; w < s.w; ++w) {
        if (mask(d, h, w) == 0.0f) continue;
        for (const auto& o : detail::kFaceOffsets) {
          const std::int64_t nd = d + o[0], nh = h + o[1], nw = w + o[2];
          if (!mask.contains(nd, nh, nw) || mask(nd, nh, nw) == 0.0f) {
            out(d, h, w) = 1.0f;
            break;
          }
        }
      }
  return out;
}

}  // namespace near
