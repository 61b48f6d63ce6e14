#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "near/error.hpp"
#include "near/marching_cubes.hpp"
#include "near/volume.hpp"

namespace near {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const fs::path& p, const void* data, std::size_t n) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("short write to " + p.string());
}

inline void write_text(const fs::path& p, const std::string& s) { write_bytes(p, s.data(), s.size()); }

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// nvol: JSON header next to a raw little-endian C-order blob. Masks are u8,
// everything else f32.

inline void save_nvol(const VolumeGrid& vol, const fs::path& header_path) {
  const bool is_mask = vol.kind() == Kind::Mask;
  fs::path bin = header_path;
  bin.replace_extension(".bin");
  json h;
  h["dtype"] = is_mask ? "u8" : "f32";
  h["shape"] = {vol.shape().d, vol.shape().h, vol.shape().w};
  h["spacing_mm"] = {vol.spacing()[0], vol.spacing()[1], vol.spacing()[2]};
  h["kind"] = std::string(to_string(vol.kind()));
  h["data"] = bin.filename().string();
  if (is_mask) {
    std::vector<std::uint8_t> bytes(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) bytes[i] = vol[i] != 0.0f ? 1 : 0;
    write_bytes(bin, bytes.data(), bytes.size());
  } else {
    write_bytes(bin, vol.data().data(), vol.size() * sizeof(float));
  }
  write_json(header_path, h);
}

inline VolumeGrid load_nvol(const fs::path& header_path) {
  const json h = read_json(header_path);
  try {
    const auto shape_v = h.at("shape").get<std::vector<std::int64_t>>();
    const auto spacing_v = h.at("spacing_mm").get<std::vector<double>>();
    if (shape_v.size() != 3 || spacing_v.size() != 3) throw IoError("nvol shape/spacing must have 3 entries");
    const Shape3 shape{shape_v[0], shape_v[1], shape_v[2]};
    const Spacing spacing{spacing_v[0], spacing_v[1], spacing_v[2]};
    const Kind kind = kind_from_string(h.at("kind").get<std::string>());
    const std::string dtype = h.at("dtype").get<std::string>();
    const fs::path bin = header_path.parent_path() / h.at("data").get<std::string>();
    const std::string raw = read_text(bin);
    const auto n = static_cast<std::size_t>(shape.voxels());
    std::vector<float> data(n);
    if (dtype == "u8") {
      if (raw.size() != n) throw IoError("nvol blob size mismatch in " + bin.string());
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<float>(static_cast<std::uint8_t>(raw[i]));
    } else if (dtype == "f32") {
      if (raw.size() != n * sizeof(float)) throw IoError("nvol blob size mismatch in " + bin.string());
      std::memcpy(data.data(), raw.data(), raw.size());
    } else {
      throw IoError("unsupported nvol dtype '" + dtype + "'");
    }
    VolumeGrid vol(shape, spacing, kind, std::move(data));
    vol.validate();
    return vol;
  } catch (const json::exception& e) {
    throw IoError("bad nvol header " + header_path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Meshes

enum class MeshFormat { Off, Stl };

inline void save_off(const TriangleMesh& m, const fs::path& p) {
  std::ostringstream out;
  out << "OFF\n" << m.vertices.size() << ' ' << m.triangles.size() << " 0\n";
  out << std::setprecision(9);
  for (const auto& v : m.vertices) out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : m.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  write_text(p, out.str());
}

inline TriangleMesh load_off(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string magic;
  std::size_t nv = 0, nf = 0, ne = 0;
  if (!(in >> magic >> nv >> nf >> ne) || magic != "OFF") throw IoError("not an OFF file: " + p.string());
  TriangleMesh m;
  m.vertices.resize(nv);
  for (auto& v : m.vertices)
    if (!(in >> v[0] >> v[1] >> v[2])) throw IoError("truncated OFF vertices");
  m.triangles.resize(nf);
  for (auto& t : m.triangles) {
    int k = 0;
    if (!(in >> k >> t[0] >> t[1] >> t[2]) || k != 3) throw IoError("OFF face is not a triangle");
  }
  return m;
}

inline void save_stl(const TriangleMesh& m, const fs::path& p) {
  std::vector<char> buf(80, 0);
  const char title[] = "near binary STL";
  std::memcpy(buf.data(), title, sizeof(title) - 1);
  auto put = [&](const void* src, std::size_t n) {
    const auto* c = static_cast<const char*>(src);
    buf.insert(buf.end(), c, c + n);
  };
  const auto count = static_cast<std::uint32_t>(m.triangles.size());
  put(&count, 4);
  for (const auto& t : m.triangles) {
    const auto &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    double n[3] = {(b[1] - a[1]) * (c[2] - a[2]) - (b[2] - a[2]) * (c[1] - a[1]),
                   (b[2] - a[2]) * (c[0] - a[0]) - (b[0] - a[0]) * (c[2] - a[2]),
                   (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])};
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    float rec[12];
    for (int k = 0; k < 3; ++k) rec[k] = len > 0 ? static_cast<float>(n[k] / len) : 0.0f;
    for (int k = 0; k < 3; ++k) {
      rec[3 + k] = static_cast<float>(a[k]);
      rec[6 + k] = static_cast<float>(b[k]);
      rec[9 + k] = static_cast<float>(c[k]);
    }
    put(rec, sizeof(rec));
    const std::uint16_t attr = 0;
    put(&attr, 2);
  }
  write_bytes(p, buf.data(), buf.size());
}

inline std::uint32_t stl_triangle_count(const fs::path& p) {
  const std::string raw = read_text(p);
  if (raw.size() < 84) throw IoError("STL too short: " + p.string());
  std::uint32_t n = 0;
  std::memcpy(&n, raw.data() + 80, 4);
  if (raw.size() != 84 + static_cast<std::size_t>(n) * 50) throw IoError("STL size mismatch: " + p.string());
  return n;
}

inline void save_mesh(const TriangleMesh& m, const fs::path& p, MeshFormat f) {
  f == MeshFormat::Off ? save_off(m, p) : save_stl(m, p);
}

}  // namespace near
