#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "near/error.hpp"
#include "near/volume.hpp"

namespace near {

struct TriangleMesh {
  std::vector<std::array<double, 3>> vertices;  // millimetres
  std::vector<std::array<std::int32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

/// Number of triangles incident to every undirected edge.
inline std::map<std::pair<std::int32_t, std::int32_t>, int> edge_incidence(const TriangleMesh& m) {
  std::map<std::pair<std::int32_t, std::int32_t>, int> edges;
  for (const auto& t : m.triangles)
    for (int i = 0; i < 3; ++i) {
      auto a = t[i], b = t[(i + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  return edges;
}

inline bool is_watertight(const TriangleMesh& m) {
  for (const auto& [e, n] : edge_incidence(m))
    if (n != 2) return false;
  return true;
}

/// V - E + F counted over referenced vertices only.
inline std::int64_t euler_characteristic(const TriangleMesh& m) {
  std::vector<char> used(m.vertices.size(), 0);
  for (const auto& t : m.triangles)
    for (auto i : t) used[i] = 1;
  std::int64_t v = 0;
  for (char u : used) v += u;
  return v - static_cast<std::int64_t>(edge_incidence(m).size()) + static_cast<std::int64_t>(m.triangles.size());
}

namespace detail {

// Cube corner c sits at offset ((c>>2)&1, (c>>1)&1, c&1) along (D, H, W).
// Edge e = axis*4 + k joins the two corners that differ only in `axis`.
struct CubeEdge {
  int axis;
  int c0, c1;  // c0 has the axis bit cleared
};

inline constexpr int corner_bit(int axis) { return 1 << (2 - axis); }

inline std::array<CubeEdge, 12> cube_edges() {
  std::array<CubeEdge, 12> edges{};
  int e = 0;
  for (int axis = 0; axis < 3; ++axis)
    for (int c = 0; c < 8; ++c)
      if ((c & corner_bit(axis)) == 0) edges[e++] = {axis, c, c | corner_bit(axis)};
  return edges;
}

inline int edge_between(const std::array<CubeEdge, 12>& edges, int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((edges[e].c0 == a && edges[e].c1 == b) || (edges[e].c0 == b && edges[e].c1 == a)) return e;
  return -1;
}

inline std::array<double, 3> corner_pos(int c) {
  return {double((c >> 2) & 1), double((c >> 1) & 1), double(c & 1)};
}

// Triangles of one corner configuration. Indices 0..11 are cube edges; index
// 12 + k is the centroid of loops[k].
struct CaseEntry {
  std::vector<std::vector<int>> loops;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};
using CaseTable = std::array<CaseEntry, 256>;

inline bool edges_share_face(const std::array<CubeEdge, 12>& edges, int a, int b) {
  for (int axis = 0; axis < 3; ++axis) {
    if (axis == edges[a].axis || axis == edges[b].axis) continue;
    if ((edges[a].c0 & corner_bit(axis)) == (edges[b].c0 & corner_bit(axis))) return true;
  }
  return false;
}

// Fan from a start vertex whose chords all cross the cube interior, so no
// chord can coincide with one from the neighbouring cube; otherwise fan around
// the loop centroid.
inline void triangulate_loop(const std::array<CubeEdge, 12>& edges, const std::vector<int>& loop, int loop_index,
                             std::vector<std::array<int, 3>>& out) {
  const std::size_t n = loop.size();
  for (std::size_t s = 0; s < n; ++s) {
    bool ok = true;
    for (std::size_t i = 2; i + 1 < n && ok; ++i) ok = !edges_share_face(edges, loop[s], loop[(s + i) % n]);
    if (!ok) continue;
    for (std::size_t i = 1; i + 1 < n; ++i) out.push_back({loop[s], loop[(s + i) % n], loop[(s + i + 1) % n]});
    return;
  }
  for (std::size_t i = 0; i < n; ++i) out.push_back({12 + loop_index, loop[i], loop[(i + 1) % n]});
}

// Builds the triangulation of every corner configuration. On each face the
// crossing points are joined by segments; faces with two diagonal inside
// corners always cut those corners off, so neighbouring cubes agree on the
// shared face and the output has no cracks. Segments are oriented so that the
// closed loops run counter-clockwise seen from the outside region, then each
// loop is triangulated.
inline CaseTable build_case_table() {
  const auto edges = cube_edges();
  std::array<std::array<double, 3>, 12> mid{};
  for (int e = 0; e < 12; ++e) {
    const auto a = corner_pos(edges[e].c0), b = corner_pos(edges[e].c1);
    for (int k = 0; k < 3; ++k) mid[e][k] = 0.5 * (a[k] + b[k]);
  }

  CaseTable table;
  for (int config = 0; config < 256; ++config) {
    auto inside = [&](int c) { return (config >> c) & 1; };
    std::array<int, 12> next;
    next.fill(-1);

    for (int axis = 0; axis < 3; ++axis)
      for (int side = 0; side < 2; ++side) {
        // corners of this face in cyclic order
        const int u = (axis + 1) % 3, v = (axis + 2) % 3;
        const int base = side ? corner_bit(axis) : 0;
        const std::array<int, 4> q{base, base | corner_bit(u), base | corner_bit(u) | corner_bit(v),
                                   base | corner_bit(v)};
        std::array<double, 3> normal{0, 0, 0};
        normal[axis] = side ? 1.0 : -1.0;

        std::vector<std::array<int, 3>> segs;  // (edge a, edge b, reference inside corner)
        std::array<int, 4> fe{};
        int crossings = 0;
        for (int i = 0; i < 4; ++i) {
          fe[i] = edge_between(edges, q[i], q[(i + 1) % 4]);
          crossings += inside(q[i]) != inside(q[(i + 1) % 4]);
        }
        if (crossings == 2) {
          int a = -1, b = -1, ref = -1;
          for (int i = 0; i < 4; ++i) {
            if (inside(q[i]) != inside(q[(i + 1) % 4])) (a < 0 ? a : b) = fe[i];
            if (inside(q[i])) ref = q[i];
          }
          segs.push_back({a, b, ref});
        } else if (crossings == 4) {
          for (int i = 0; i < 4; ++i)
            if (inside(q[i])) segs.push_back({fe[(i + 3) % 4], fe[i], q[i]});
        }

        for (auto [a, b, ref] : segs) {
          const auto c = corner_pos(ref);
          std::array<double, 3> d{}, r{};
          for (int k = 0; k < 3; ++k) {
            d[k] = mid[b][k] - mid[a][k];
            r[k] = c[k] - 0.5 * (mid[a][k] + mid[b][k]);
          }
          const std::array<double, 3> x{d[1] * r[2] - d[2] * r[1], d[2] * r[0] - d[0] * r[2],
                                        d[0] * r[1] - d[1] * r[0]};
          const double dot = x[0] * normal[0] + x[1] * normal[1] + x[2] * normal[2];
          if (dot > 0) std::swap(a, b);
          if (next[a] != -1) throw Error("marching cubes table: inconsistent segment orientation");
          next[a] = b;
        }
      }

    std::array<bool, 12> seen{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || seen[start]) continue;
      std::vector<int> loop;
      for (int e = start; !seen[e]; e = next[e]) {
        seen[e] = true;
        loop.push_back(e);
        if (next[e] < 0) throw Error("marching cubes table: open loop");
      }
      detail::triangulate_loop(edges, loop, static_cast<int>(table[config].loops.size()), table[config].triangles);
      table[config].loops.push_back(std::move(loop));
    }
  }
  return table;
}

inline const CaseTable& case_table() {
  static const CaseTable table = build_case_table();
  return table;
}

}  // namespace detail

/// Iso-surface at level t. Grid points with value > t are inside; vertices are
/// placed by linear interpolation along lattice edges and expressed in
/// millimetres (voxel index times spacing). A few saddle configurations add
/// one centroid vertex inside the cube. Triangles wind counter-clockwise seen
/// from the outside (lower-valued) region.
inline TriangleMesh marching_cubes(const VolumeGrid& field, double t) {
  for (float v : field.data())
    if (!std::isfinite(v)) throw InvalidArgument("marching_cubes: non-finite field value");
  const Shape3 s = field.shape();
  const auto& sp = field.spacing();
  const auto edges = detail::cube_edges();
  const auto& table = detail::case_table();

  TriangleMesh mesh;
  std::vector<std::int32_t> vertex_of(static_cast<std::size_t>(field.size()) * 3, -1);

  auto lattice_vertex = [&](std::int64_t d, std::int64_t h, std::int64_t w, int axis) {
    const std::int64_t g0 = field.index(d, h, w);
    std::int32_t& slot = vertex_of[static_cast<std::size_t>(g0) * 3 + axis];
    if (slot >= 0) return slot;
    std::array<std::int64_t, 3> p1{d, h, w};
    ++p1[axis];
    const double v0 = field[g0], v1 = field(p1[0], p1[1], p1[2]);
    const double alpha = (t - v0) / (v1 - v0);
    std::array<double, 3> pos{double(d), double(h), double(w)};
    pos[axis] += alpha;
    for (int k = 0; k < 3; ++k) pos[k] *= sp[k];
    slot = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pos);
    return slot;
  };

  for (std::int64_t d = 0; d + 1 < s.d; ++d)
    for (std::int64_t h = 0; h + 1 < s.h; ++h)
      for (std::int64_t w = 0; w + 1 < s.w; ++w) {
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          const float v = field(d + ((c >> 2) & 1), h + ((c >> 1) & 1), w + (c & 1));
          if (v > t) config |= 1 << c;
        }
        if (config == 0 || config == 255) continue;
        const auto& entry = table[config];
        auto edge_vertex = [&](int k) {
          const auto& e = edges[k];
          return lattice_vertex(d + ((e.c0 >> 2) & 1), h + ((e.c0 >> 1) & 1), w + (e.c0 & 1), e.axis);
        };
        std::array<std::int32_t, 4> centroid;
        centroid.fill(-1);
        auto vertex = [&](int k) {
          if (k < 12) return edge_vertex(k);
          std::int32_t& slot = centroid[k - 12];
          if (slot < 0) {
            const auto& loop = entry.loops[k - 12];
            std::array<double, 3> c{0, 0, 0};
            for (int e : loop) {
              const auto& v = mesh.vertices[edge_vertex(e)];
              for (int a = 0; a < 3; ++a) c[a] += v[a] / static_cast<double>(loop.size());
            }
            slot = static_cast<std::int32_t>(mesh.vertices.size());
            mesh.vertices.push_back(c);
          }
          return slot;
        };
        for (const auto& tri : entry.triangles) mesh.triangles.push_back({vertex(tri[0]), vertex(tri[1]), vertex(tri[2])});
      }
  return mesh;
}

}  // namespace near
