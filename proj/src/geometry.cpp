#include "csdpaint/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/errors.hpp"

namespace csdpaint {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view tok, const std::string& source, std::size_t line_no) {
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw InputError(source + ":" + std::to_string(line_no) + ": bad number '" + std::string(tok) + "'");
  }
  return v;
}

// OBJ indices are 1-based; negative values count back from the current end.
int resolve_index(std::string_view tok, std::size_t count, const std::string& source, std::size_t line_no) {
  long v = 0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || v == 0) {
    throw InputError(source + ":" + std::to_string(line_no) + ": bad index '" + std::string(tok) + "'");
  }
  return static_cast<int>(v > 0 ? v - 1 : static_cast<long>(count) + v);
}

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

Mesh parse_obj(std::string_view text, const std::string& source) {
  Mesh mesh;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    const auto& tag = tokens[0];
    if (tag == "v") {
      if (tokens.size() < 4) throw InputError(source + ":" + std::to_string(line_no) + ": vertex needs 3 coordinates");
      mesh.vertices.emplace_back(parse_double(tokens[1], source, line_no), parse_double(tokens[2], source, line_no),
                                 parse_double(tokens[3], source, line_no));
    } else if (tag == "vt") {
      if (tokens.size() < 3) throw InputError(source + ":" + std::to_string(line_no) + ": vt needs 2 coordinates");
      mesh.uvs.emplace_back(parse_double(tokens[1], source, line_no), parse_double(tokens[2], source, line_no));
    } else if (tag == "f") {
      const std::size_t face_index = mesh.faces.size();
      if (tokens.size() != 4) {
        throw InputError(source + ": face " + std::to_string(face_index) + " (line " + std::to_string(line_no) +
                         ") has " + std::to_string(tokens.size() - 1) + " corners; only triangles are supported");
      }
      std::array<int, 3> f{};
      std::array<int, 3> ft{};
      for (int k = 0; k < 3; ++k) {
        const auto corner = tokens[k + 1];
        const auto slash = corner.find('/');
        f[k] = resolve_index(corner.substr(0, slash), mesh.vertices.size(), source, line_no);
        std::string_view uv_tok;
        if (slash != std::string_view::npos) {
          const auto rest = corner.substr(slash + 1);
          uv_tok = rest.substr(0, rest.find('/'));
        }
        if (uv_tok.empty()) {
          if (mesh.uvs.empty()) throw InputError(source + ": mesh has no UV atlas");
          throw InputError(source + ": face " + std::to_string(face_index) + " (line " + std::to_string(line_no) +
                           ") is missing a UV index on corner " + std::to_string(k));
        }
        ft[k] = resolve_index(uv_tok, mesh.uvs.size(), source, line_no);
      }
      mesh.faces.push_back(f);
      mesh.face_uvs.push_back(ft);
    }
    // vn, o, g, s, usemtl, mtllib: ignored
  }
  if (mesh.uvs.empty()) throw InputError(source + ": mesh has no UV atlas");
  if (mesh.faces.empty()) throw InputError(source + ": mesh has no faces");
  try {
    finalize_mesh(mesh);
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
  return mesh;
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read mesh '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_obj(buffer.str(), path.string());
}

void finalize_mesh(Mesh& mesh) {
  if (mesh.face_uvs.size() != mesh.faces.size()) throw InputError("every face needs UV indices");
  const auto nv = static_cast<int>(mesh.vertices.size());
  const auto nt = static_cast<int>(mesh.uvs.size());
  mesh.normals.clear();
  mesh.normals.reserve(mesh.faces.size());
  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    for (int k = 0; k < 3; ++k) {
      if (mesh.faces[fi][k] < 0 || mesh.faces[fi][k] >= nv) {
        throw InputError("face " + std::to_string(fi) + ": vertex index out of range");
      }
      if (mesh.face_uvs[fi][k] < 0 || mesh.face_uvs[fi][k] >= nt) {
        throw InputError("face " + std::to_string(fi) + ": UV index out of range");
      }
    }
    const Vec3& a = mesh.vertices[mesh.faces[fi][0]];
    const Vec3& b = mesh.vertices[mesh.faces[fi][1]];
    const Vec3& c = mesh.vertices[mesh.faces[fi][2]];
    const Vec3 n = (b - a).cross(c - a);
    const double len = n.norm();
    if (!(len > 0.0) || !std::isfinite(len)) {
      throw InputError("face " + std::to_string(fi) + " has zero area");
    }
    mesh.normals.push_back(n / len);
  }
}

Mesh normalized_to_unit_cube(Mesh mesh) {
  if (mesh.vertices.empty()) return mesh;
  Vec3 lo = mesh.vertices.front();
  Vec3 hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  const double extent = (hi - lo).maxCoeff();
  const double scale = extent > 0.0 ? 1.0 / extent : 1.0;
  for (auto& v : mesh.vertices) v = (v - center) * scale;
  finalize_mesh(mesh);
  return mesh;
}

Vec2 texel_center(Resolution res, int row, int col) {
  return Vec2((col + 0.5) / res.width, (row + 0.5) / res.height);
}

Vec2 forward_uv(const Mesh& mesh, int face, const Barycentric& bary) {
  const auto& ft = mesh.face_uvs.at(static_cast<std::size_t>(face));
  return bary[0] * mesh.uvs[ft[0]] + bary[1] * mesh.uvs[ft[1]] + bary[2] * mesh.uvs[ft[2]];
}

std::size_t TexelSurfaceMap::valid_count() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.valid; }));
}

double TexelSurfaceMap::valid_fraction() const {
  return entries.empty() ? 0.0 : static_cast<double>(valid_count()) / static_cast<double>(entries.size());
}

TexelSurfaceMap invert_uv(const Mesh& mesh, Resolution resolution) {
  if (resolution.height < 1 || resolution.width < 1) {
    throw ShapeError("invert_uv: resolution must be at least 1x1");
  }
  constexpr double kEdgeTol = 1e-12;
  constexpr double kInteriorTol = 1e-9;

  TexelSurfaceMap tsm;
  tsm.resolution = resolution;
  tsm.entries.assign(resolution.pixels(), TexelEntry{});

  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& ft = mesh.face_uvs[fi];
    const Vec2& a = mesh.uvs[ft[0]];
    const Vec2& b = mesh.uvs[ft[1]];
    const Vec2& c = mesh.uvs[ft[2]];
    const double area2 = cross2(b - a, c - a);
    if (std::abs(area2) <= 1e-14) {
      tsm.diagnostics.degenerate_uv_faces.push_back(static_cast<int>(fi));
      tsm.diagnostics.warnings.push_back("face " + std::to_string(fi) + " has a degenerate UV triangle");
      continue;
    }
    const double umin = std::min({a.x(), b.x(), c.x()});
    const double umax = std::max({a.x(), b.x(), c.x()});
    const double vmin = std::min({a.y(), b.y(), c.y()});
    const double vmax = std::max({a.y(), b.y(), c.y()});
    // Texel (row, col) has center ((col+0.5)/W, (row+0.5)/H).
    const int col0 = std::max(0, static_cast<int>(std::floor(umin * resolution.width - 0.5)));
    const int col1 = std::min(resolution.width - 1, static_cast<int>(std::ceil(umax * resolution.width - 0.5)));
    const int row0 = std::max(0, static_cast<int>(std::floor(vmin * resolution.height - 0.5)));
    const int row1 = std::min(resolution.height - 1, static_cast<int>(std::ceil(vmax * resolution.height - 0.5)));

    const auto& f = mesh.faces[fi];
    for (int row = row0; row <= row1; ++row) {
      for (int col = col0; col <= col1; ++col) {
        const Vec2 p = texel_center(resolution, row, col);
        Barycentric l{cross2(b - p, c - p) / area2, cross2(c - p, a - p) / area2, cross2(a - p, b - p) / area2};
        if (l[0] < -kEdgeTol || l[1] < -kEdgeTol || l[2] < -kEdgeTol) continue;
        auto& entry = tsm.entries[static_cast<std::size_t>(row) * resolution.width + col];
        if (entry.valid) {
          if (l[0] > kInteriorTol && l[1] > kInteriorTol && l[2] > kInteriorTol) ++tsm.diagnostics.overlap_texels;
          continue;
        }
        for (double& w : l) w = std::max(w, 0.0);
        const double sum = l[0] + l[1] + l[2];
        if (sum != 1.0) {
          for (double& w : l) w /= sum;
        }
        entry.valid = true;
        entry.face = static_cast<std::uint32_t>(fi);
        entry.bary = l;
        entry.point = l[0] * mesh.vertices[f[0]] + l[1] * mesh.vertices[f[1]] + l[2] * mesh.vertices[f[2]];
        entry.normal = mesh.normals[fi];
      }
    }
  }
  if (tsm.diagnostics.overlap_texels > 0) {
    tsm.diagnostics.warnings.push_back(std::to_string(tsm.diagnostics.overlap_texels) +
                                       " texels lie inside overlapping UV triangles; lowest face index kept");
  }
  return tsm;
}

std::vector<std::uint8_t> serialize_tsm(const TexelSurfaceMap& tsm) {
  ByteWriter w;
  w.put_bytes("TSM1");
  w.put_u32(static_cast<std::uint32_t>(tsm.resolution.height));
  w.put_u32(static_cast<std::uint32_t>(tsm.resolution.width));
  for (const auto& e : tsm.entries) {
    w.put_u8(e.valid ? 1 : 0);
    w.put_u32(e.valid ? e.face : TexelEntry::kNoFace);
    for (double b : e.bary) w.put_f32(static_cast<float>(b));
    for (int k = 0; k < 3; ++k) w.put_f32(static_cast<float>(e.point[k]));
    for (int k = 0; k < 3; ++k) w.put_f32(static_cast<float>(e.normal[k]));
  }
  return std::move(w.bytes());
}

TexelSurfaceMap deserialize_tsm(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || r.get_string(4) != "TSM1") throw InputError("not a texel surface map (bad magic)");
  TexelSurfaceMap tsm;
  tsm.resolution.height = static_cast<int>(r.get_u32());
  tsm.resolution.width = static_cast<int>(r.get_u32());
  constexpr std::size_t kRecord = 1 + 4 + 9 * 4;
  if (r.remaining() != tsm.resolution.pixels() * kRecord) {
    throw InputError("texel surface map payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                     std::to_string(tsm.resolution.pixels() * kRecord));
  }
  tsm.entries.resize(tsm.resolution.pixels());
  for (auto& e : tsm.entries) {
    e.valid = r.get_u8() != 0;
    e.face = r.get_u32();
    for (double& b : e.bary) b = r.get_f32();
    for (int k = 0; k < 3; ++k) e.point[k] = r.get_f32();
    for (int k = 0; k < 3; ++k) e.normal[k] = r.get_f32();
  }
  return tsm;
}

void write_tsm(const TexelSurfaceMap& tsm, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_tsm(tsm));
}

TexelSurfaceMap read_tsm(const std::filesystem::path& path) { return deserialize_tsm(read_file_bytes(path)); }

}  // namespace csdpaint
