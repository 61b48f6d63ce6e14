#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "near/error.hpp"

namespace near {

/// What the scalars of a grid mean. `Intensity` holds raw scanner values
/// (e.g. Hounsfield units) before windowing.
enum class Kind { Intensity, Appearance, Mask, Distance };

inline std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::Intensity: return "intensity";
    case Kind::Appearance: return "appearance";
    case Kind::Mask: return "mask";
    case Kind::Distance: return "distance";
  }
  return "unknown";
}

inline Kind kind_from_string(std::string_view s) {
  if (s == "intensity") return Kind::Intensity;
  if (s == "appearance") return Kind::Appearance;
  if (s == "mask") return Kind::Mask;
  if (s == "distance") return Kind::Distance;
  throw InvalidArgument("unknown volume kind '" + std::string(s) + "'");
}

struct Shape3 {
  std::int64_t d = 0, h = 0, w = 0;

  std::int64_t voxels() const { return d * h * w; }
  std::int64_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
  bool operator==(const Shape3&) const = default;
};

inline Shape3 cube(std::int64_t n) { return {n, n, n}; }

using Spacing = std::array<double, 3>;
using Index3 = std::array<std::int64_t, 3>;

/// Marks "no foreground reachable" in a Distance grid.
inline constexpr float kNoForeground = -1.0f;

/// Dense 3D scalar grid in C order: index = (d*H + h)*W + w.
class VolumeGrid {
 public:
  VolumeGrid() = default;

  VolumeGrid(Shape3 shape, Spacing spacing, Kind kind, float fill = 0.0f)
      : shape_(shape), spacing_(spacing), kind_(kind) {
    if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0)
      throw InvalidArgument("volume shape must be positive");
    for (double s : spacing)
      if (!(s > 0.0)) throw InvalidArgument("volume spacing must be strictly positive");
    data_.assign(static_cast<std::size_t>(shape.voxels()), fill);
  }

  VolumeGrid(Shape3 shape, Spacing spacing, Kind kind, std::vector<float> data)
      : VolumeGrid(shape, spacing, kind) {
    if (data.size() != data_.size()) throw ShapeMismatch("volume data length does not match shape");
    data_ = std::move(data);
  }

  static VolumeGrid mask(Shape3 shape, Spacing spacing = {1, 1, 1}) {
    return VolumeGrid(shape, spacing, Kind::Mask);
  }

  const Shape3& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  Kind kind() const { return kind_; }
  void set_kind(Kind k) { kind_ = k; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  std::int64_t index(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return (d * shape_.h + h) * shape_.w + w;
  }
  Index3 coords(std::int64_t i) const {
    return {i / (shape_.h * shape_.w), (i / shape_.w) % shape_.h, i % shape_.w};
  }
  bool contains(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return d >= 0 && h >= 0 && w >= 0 && d < shape_.d && h < shape_.h && w < shape_.w;
  }

  float& operator()(std::int64_t d, std::int64_t h, std::int64_t w) { return data_[index(d, h, w)]; }
  float operator()(std::int64_t d, std::int64_t h, std::int64_t w) const {
    return data_[index(d, h, w)];
  }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::int64_t count_foreground() const {
    return std::count_if(data_.begin(), data_.end(), [](float v) { return v != 0.0f; });
  }

  /// Throws if the element-kind invariants are violated.
  void validate() const {
    for (float v : data_) {
      switch (kind_) {
        case Kind::Appearance:
          if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("appearance value outside [0,1]");
          break;
        case Kind::Mask:
          if (v != 0.0f && v != 1.0f) throw InvalidArgument("mask value not in {0,1}");
          break;
        case Kind::Distance:
          if (!(v >= 0.0f || v == kNoForeground)) throw InvalidArgument("negative distance");
          break;
        case Kind::Intensity:
          if (!std::isfinite(v)) throw InvalidArgument("non-finite intensity");
          break;
      }
    }
  }

  bool operator==(const VolumeGrid&) const = default;

 private:
  Shape3 shape_{};
  Spacing spacing_{1, 1, 1};
  Kind kind_ = Kind::Mask;
  std::vector<float> data_;
};

inline void require_mask(const VolumeGrid& v, const char* op) {
  if (v.kind() != Kind::Mask) throw InvalidArgument(std::string(op) + " expects a mask volume");
}

inline void require_same_shape(const VolumeGrid& a, const VolumeGrid& b, const char* op) {
  if (!(a.shape() == b.shape())) throw ShapeMismatch(std::string(op) + ": volume shapes differ");
}

/// Clamp intensities to [lo, hi] and rescale linearly to [0, 1].
inline VolumeGrid window_normalize(const VolumeGrid& raw, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("invalid window: lo must be below hi");
  VolumeGrid out(raw.shape(), raw.spacing(), Kind::Appearance);
  const double width = hi - lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = (static_cast<double>(raw[i]) - lo) / width;
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

/// Cut a size^3 block centred on `center` (voxel index). For even sizes the
/// block spans [center - size/2, center + size/2). Voxels outside the source
/// are zero.
inline VolumeGrid center_crop(const VolumeGrid& vol, const Index3& center, std::int64_t size) {
  if (size <= 0) throw InvalidArgument("crop size must be positive");
  VolumeGrid out(cube(size), vol.spacing(), vol.kind());
  const std::int64_t half = size / 2;
  const Index3 origin{center[0] - half, center[1] - half, center[2] - half};
  for (std::int64_t d = 0; d < size; ++d)
    for (std::int64_t h = 0; h < size; ++h)
      for (std::int64_t w = 0; w < size; ++w) {
        const std::int64_t sd = origin[0] + d, sh = origin[1] + h, sw = origin[2] + w;
        if (vol.contains(sd, sh, sw)) out(d, h, w) = vol(sd, sh, sw);
      }
  return out;
}

/// Voxel-index center of a grid: (n-1)/2 rounded up, so that an even-sized
/// crop of the full size at this center is the identity.
inline Index3 grid_center(const Shape3& s) { return {s.d / 2, s.h / 2, s.w / 2}; }

/// Foreground bounding box as inclusive [lo, hi] per axis. Returns false when empty.
inline bool foreground_bbox(const VolumeGrid& m, Index3& lo, Index3& hi) {
  lo = {m.shape().d, m.shape().h, m.shape().w};
  hi = {-1, -1, -1};
  bool any = false;
  for (std::int64_t d = 0; d < m.shape().d; ++d)
    for (std::int64_t h = 0; h < m.shape().h; ++h)
      for (std::int64_t w = 0; w < m.shape().w; ++w)
        if (m(d, h, w) != 0.0f) {
          any = true;
          lo = {std::min(lo[0], d), std::min(lo[1], h), std::min(lo[2], w)};
          hi = {std::max(hi[0], d), std::max(hi[1], h), std::max(hi[2], w)};
        }
  return any;
}

}  // namespace near
