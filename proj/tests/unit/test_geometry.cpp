#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/errors.hpp"
#include "csdpaint/geometry.hpp"
#include "doctest.h"

using namespace csdpaint;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CSDPAINT_TEST_DATA;

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_records(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

// Sign-of-area point-in-triangle test, independent of the library's rasterizer.
bool inside(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  auto cross = [](const Vec2& o, const Vec2& u, const Vec2& v) {
    return (u.x() - o.x()) * (v.y() - o.y()) - (u.y() - o.y()) * (v.x() - o.x());
  };
  const double d1 = cross(a, b, p);
  const double d2 = cross(b, c, p);
  const double d3 = cross(c, a, p);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

}  // namespace

TEST_CASE("quad OBJ parses into two triangles") {
  const Mesh mesh = load_mesh(kData / "quad.obj");
  CHECK(mesh.vertices.size() == 4);
  CHECK(mesh.face_count() == 2);
  CHECK(mesh.uvs.size() == 4);
}

TEST_CASE("face with a missing UV corner names the face") {
  const std::string obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nf 1/1 2/2 3\n";
  try {
    parse_obj(obj);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("face 0") != std::string::npos);
  }
}

TEST_CASE("mesh without UVs and non-triangle faces are rejected") {
  CHECK_THROWS_WITH_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"),
                       doctest::Contains("mesh has no UV atlas"), InputError);
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n"), InputError);
  CHECK_THROWS_AS(load_mesh(kData / "does_not_exist.obj"), InputError);
}

TEST_CASE("icosphere fixture has 320 faces with unit normals") {
  const std::string text = read_text(kData / "icosphere.obj");
  const Mesh mesh = load_mesh(kData / "icosphere.obj");
  CHECK(mesh.face_count() == static_cast<std::size_t>(count_records(text, "f ")));
  CHECK(mesh.face_count() == 320);
  CHECK(mesh.vertices.size() == 162);
  for (const Vec3& n : mesh.normals) CHECK(std::abs(n.norm() - 1.0) <= 1e-6);
}

TEST_CASE("identity-UV quad maps texel centers to surface points") {
  const Mesh mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
                              "f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n");
  const TexelSurfaceMap tsm = invert_uv(mesh, {4, 4});
  CHECK(tsm.valid_count() == 16);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      const Vec2 uv = texel_center({4, 4}, r, c);
      const TexelEntry& e = tsm.at(r, c);
      CHECK(std::abs(e.point.x() - uv.x()) <= 1e-6);
      CHECK(std::abs(e.point.y() - uv.y()) <= 1e-6);
      CHECK(std::abs(e.point.z()) <= 1e-6);
    }
  }
}

TEST_CASE("invalid texel count matches brute-force point-in-triangle enumeration") {
  // Two charts covering part of the square.
  const Mesh mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
                              "vt 0.05 0.05\nvt 0.6 0.13\nvt 0.1 0.45\nvt 0.55 0.55\nvt 0.95 0.6\nvt 0.7 0.95\n"
                              "f 1/1 2/2 3/3\nf 1/4 2/5 4/6\n");
  const Resolution res{8, 8};
  const TexelSurfaceMap tsm = invert_uv(mesh, res);
  std::size_t expected_invalid = 0;
  for (int r = 0; r < res.height; ++r) {
    for (int c = 0; c < res.width; ++c) {
      const Vec2 p = texel_center(res, r, c);
      bool any = false;
      for (std::size_t f = 0; f < mesh.face_count(); ++f) {
        const auto& uv = mesh.face_uvs[f];
        any = any || inside(p, mesh.uvs[uv[0]], mesh.uvs[uv[1]], mesh.uvs[uv[2]]);
      }
      expected_invalid += !any;
      CHECK(tsm.at(r, c).valid == any);
    }
  }
  CHECK(res.pixels() - tsm.valid_count() == expected_invalid);
}

TEST_CASE("degenerate UV triangle owns no texels and warns") {
  const Mesh mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 1\n"
                              "vt 0 0\nvt 1 0\nvt 0 1\nvt 0.5 0.5\n"
                              "f 1/1 2/2 3/3\nf 2/4 3/4 4/4\n");
  const TexelSurfaceMap tsm = invert_uv(mesh, {16, 16});
  for (const auto& e : tsm.entries) {
    if (e.valid) CHECK(e.face == 0);
  }
  CHECK(tsm.diagnostics.degenerate_uv_faces == std::vector<int>{1});
  CHECK_FALSE(tsm.diagnostics.warnings.empty());
}

TEST_CASE("overlapping UV triangles go to the lowest face index") {
  const Mesh mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
                              "vt 0 0\nvt 1 0\nvt 0 1\n"
                              "f 1/1 2/2 3/3\nf 1/1 2/2 4/3\n");
  const TexelSurfaceMap tsm = invert_uv(mesh, {8, 8});
  CHECK(tsm.valid_count() > 0);
  for (const auto& e : tsm.entries) {
    if (e.valid) CHECK(e.face == 0);
  }
  CHECK(tsm.diagnostics.overlap_texels > 0);
}

TEST_CASE("forward_uv at vertices and centroid") {
  const Mesh mesh = load_mesh(kData / "icosphere.obj");
  for (int f : {0, 17, 319}) {
    const auto& uv = mesh.face_uvs[f];
    CHECK(forward_uv(mesh, f, {1.0, 0.0, 0.0}) == mesh.uvs[uv[0]]);
    const Vec2 centroid = (mesh.uvs[uv[0]] + mesh.uvs[uv[1]] + mesh.uvs[uv[2]]) / 3.0;
    CHECK((forward_uv(mesh, f, {1.0 / 3, 1.0 / 3, 1.0 / 3}) - centroid).norm() <= 1e-12);
  }
}

TEST_CASE("forward_uv inverts invert_uv on every valid texel") {
  for (const char* name : {"quad.obj", "icosphere.obj", "cube.obj"}) {
    const Mesh mesh = load_mesh(kData / name);
    const Resolution res{48, 40};
    const TexelSurfaceMap tsm = invert_uv(mesh, res);
    double worst = 0.0;
    for (int r = 0; r < res.height; ++r) {
      for (int c = 0; c < res.width; ++c) {
        const TexelEntry& e = tsm.at(r, c);
        if (!e.valid) continue;
        worst = std::max(worst, (forward_uv(mesh, static_cast<int>(e.face), e.bary) - texel_center(res, r, c))
                                    .cwiseAbs()
                                    .maxCoeff());
      }
    }
    INFO(name);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("texel surface map serializes round trip and rejects truncation") {
  const Mesh mesh = load_mesh(kData / "cube.obj");
  const TexelSurfaceMap tsm = invert_uv(mesh, {32, 32});
  const auto bytes = serialize_tsm(tsm);
  const TexelSurfaceMap back = deserialize_tsm(bytes);
  CHECK(back.resolution == tsm.resolution);
  CHECK(back.valid_count() == tsm.valid_count());
  for (std::size_t i = 0; i < tsm.entries.size(); ++i) {
    CHECK(back.entries[i].face == tsm.entries[i].face);
    CHECK(back.entries[i].point == tsm.entries[i].point);
  }
  CHECK_THROWS_AS(deserialize_tsm(std::span(bytes).first(bytes.size() - 3)), InputError);
}

TEST_CASE("normalization centers and scales the bounding box") {
  const Mesh mesh = normalized_to_unit_cube(load_mesh(kData / "icosphere.obj"));
  Vec3 lo = mesh.vertices[0];
  Vec3 hi = mesh.vertices[0];
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  CHECK(((lo + hi) / 2.0).norm() <= 1e-12);
  CHECK(std::abs((hi - lo).maxCoeff() - 1.0) <= 1e-12);
}
