#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "csdpaint/image.hpp"

namespace csdpaint {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Barycentric = std::array<double, 3>;

// UV-mapped triangle mesh. Indices are zero-based.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec2> uvs;
  std::vector<std::array<int, 3>> face_uvs;
  std::vector<Vec3> normals;  // one unit geometric normal per face

  std::size_t face_count() const { return faces.size(); }
};

// Parses an ASCII OBJ (v / vt / vn / f records). Faces must be triangles with
// a UV index on every corner. `source` names the input in error messages.
Mesh parse_obj(std::string_view text, const std::string& source = "<memory>");
Mesh load_mesh(const std::filesystem::path& path);

// Checks index ranges and non-degenerate 3D faces, and recomputes normals.
void finalize_mesh(Mesh& mesh);

// Translates and uniformly scales the mesh so its bounding box is centered at
// the origin with its longest side equal to 1.
Mesh normalized_to_unit_cube(Mesh mesh);

// UV coordinate of a texel center at (row, col).
Vec2 texel_center(Resolution res, int row, int col);

// Barycentric combination of a face's UV corners.
Vec2 forward_uv(const Mesh& mesh, int face, const Barycentric& bary);

struct TexelEntry {
  static constexpr std::uint32_t kNoFace = 0xffffffffu;

  bool valid = false;
  std::uint32_t face = kNoFace;
  Barycentric bary{0.0, 0.0, 0.0};
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
};

struct InversionDiagnostics {
  std::size_t overlap_texels = 0;
  std::vector<int> degenerate_uv_faces;
  std::vector<std::string> warnings;
};

// Per-texel inverse of the UV map: which face (if any) owns each texel
// center, with barycentrics and the matching 3D surface point.
struct TexelSurfaceMap {
  Resolution resolution;
  std::vector<TexelEntry> entries;  // row-major
  InversionDiagnostics diagnostics;

  const TexelEntry& at(int row, int col) const {
    return entries[static_cast<std::size_t>(row) * resolution.width + col];
  }
  std::size_t valid_count() const;
  double valid_fraction() const;
};

// Assigns every texel center inside a UV triangle to that face. Texels inside
// several triangles go to the lowest face index; interior overlaps and
// zero-area UV triangles are reported in the diagnostics.
TexelSurfaceMap invert_uv(const Mesh& mesh, Resolution resolution);

// Binary cache: "TSM1", H, W (u32 LE), then per-texel records.
std::vector<std::uint8_t> serialize_tsm(const TexelSurfaceMap& tsm);
TexelSurfaceMap deserialize_tsm(std::span<const std::uint8_t> bytes);
void write_tsm(const TexelSurfaceMap& tsm, const std::filesystem::path& path);
TexelSurfaceMap read_tsm(const std::filesystem::path& path);

}  // namespace csdpaint
