#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/cli.hpp"
#include "csdpaint/geometry.hpp"
#include "doctest.h"

using namespace csdpaint;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CSDPAINT_TEST_DATA;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csdpaint_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& mesh) {
  const fs::path p = dir / "run.yaml";
  std::ofstream f(p);
  f << "mesh: " << mesh << "\n"
    << "texture: 16\niterations: 2\nseed: 4\n"
    << "stages: [{resolution: 8, lambda: 1.0}, {resolution: 16, lambda: 0.5}]\n"
    << "field: {width: 16}\n"
    << "prompt: {object_class: sphere, region: cap, style: striped}\n"
    << "export: {preview_views: 1, preview_resolution: 16}\n";
  return p;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == kExitConfigError);
  CHECK(cli({"frobnicate"}).code == kExitConfigError);
  CHECK(cli({"run"}).code == kExitConfigError);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("run writes the manifest and echoes overrides") {
  const fs::path dir = scratch("run");
  const fs::path cfg = write_config(dir, (kData / "icosphere.obj").string());
  const Result r = cli({"run", "-c", cfg.string(), "-o", (dir / "a").string(), "-q", "--set",
                        "stages.1.lambda=0.25", "--set", "field.width=8"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(r.out.find("# effective config") != std::string::npos);
  CHECK(r.out.find("lambda: 0.25") != std::string::npos);
  CHECK(slurp(dir / "a" / "effective_config.yaml").find("width: 8") != std::string::npos);
  CHECK(fs::exists(dir / "a" / "manifest.tsv"));
  CHECK(r.err.empty());
  fs::remove_all(dir);
}

TEST_CASE("two runs with the same seed produce identical manifests") {
  const fs::path dir = scratch("repeat");
  const fs::path cfg = write_config(dir, (kData / "icosphere.obj").string());
  for (const char* sub : {"a", "b"}) {
    const Result r = cli({"run", "-c", cfg.string(), "-o", (dir / sub).string(), "-q", "--porcelain"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(r.out.find("files: ") != std::string::npos);
  }
  CHECK(slurp(dir / "a" / "manifest.tsv") == slurp(dir / "b" / "manifest.tsv"));
  const Result other = cli({"run", "-c", cfg.string(), "-o", (dir / "c").string(), "-q", "--seed", "5"});
  REQUIRE(other.code == kExitOk);
  CHECK(slurp(dir / "a" / "manifest.tsv") != slurp(dir / "c" / "manifest.tsv"));
  fs::remove_all(dir);
}

TEST_CASE("bake re-exports maps from checkpoints") {
  const fs::path dir = scratch("bake");
  const fs::path cfg = write_config(dir, (kData / "icosphere.obj").string());
  REQUIRE(cli({"run", "-c", cfg.string(), "-o", (dir / "run").string(), "-q"}).code == kExitOk);
  const Result r = cli({"bake", "-c", cfg.string(), "--checkpoints", (dir / "run").string(), "-o",
                        (dir / "baked").string(), "--porcelain"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  for (const char* name : {"L_map.png", "T_map.png", "B_map.png", "T_prime_map.png", "T_map@2x.png"}) {
    CHECK_MESSAGE(slurp(dir / "baked" / name) == slurp(dir / "run" / name), name);
  }
  const Result missing = cli({"bake", "-c", cfg.string(), "--checkpoints", (dir / "nowhere").string(), "-o",
                              (dir / "baked2").string()});
  CHECK(missing.code == kExitConfigError);
  CHECK(missing.err.find("localization.nf01") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("missing mesh exits 2 and names the key") {
  const fs::path dir = scratch("nomesh");
  const fs::path cfg = write_config(dir, "does_not_exist.obj");
  const Result r = cli({"run", "-c", cfg.string(), "-o", (dir / "out").string(), "-q"});
  CHECK(r.code == kExitConfigError);
  CHECK(r.err.find("mesh") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("invalid override exits 2") {
  const fs::path dir = scratch("badset");
  const fs::path cfg = write_config(dir, (kData / "icosphere.obj").string());
  const Result r = cli({"run", "-c", cfg.string(), "-o", (dir / "out").string(), "--set", "iterations=0"});
  CHECK(r.code == kExitConfigError);
  CHECK(r.err.find("iterations") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("inspect describes caches and checkpoints") {
  const fs::path dir = scratch("inspect");
  const Mesh mesh = load_mesh(kData / "quad.obj");
  const TexelSurfaceMap tsm = invert_uv(mesh, {8, 8});
  write_tsm(tsm, dir / "quad.tsm");
  const Result t = cli({"inspect", (dir / "quad.tsm").string(), "--porcelain"});
  REQUIRE_MESSAGE(t.code == kExitOk, t.err);
  CHECK(t.out.find("kind: texel surface map") != std::string::npos);
  CHECK(t.out.find("valid_texels: " + std::to_string(tsm.valid_count())) != std::string::npos);

  const fs::path cfg = write_config(dir, (kData / "icosphere.obj").string());
  REQUIRE(cli({"run", "-c", cfg.string(), "-o", (dir / "run").string(), "-q"}).code == kExitOk);
  const Result c = cli({"inspect", (dir / "run" / "localization.nf01").string(), "--porcelain"});
  REQUIRE_MESSAGE(c.code == kExitOk, c.err);
  CHECK(c.out.find("head: probability") != std::string::npos);
  CHECK(c.out.find("width: 16") != std::string::npos);

  // Truncated checkpoint and unknown magic.
  auto bytes = read_file_bytes(dir / "run" / "texture.nf01");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(dir / "truncated.nf01", bytes);
  CHECK(cli({"inspect", (dir / "truncated.nf01").string()}).code == kExitConfigError);
  write_file_bytes(dir / "junk.bin", std::vector<std::uint8_t>{'J', 'U', 'N', 'K', 0, 0});
  const Result junk = cli({"inspect", (dir / "junk.bin").string()});
  CHECK(junk.code == kExitConfigError);
  CHECK(junk.err.find("magic") != std::string::npos);
  CHECK(cli({"inspect", (dir / "absent.tsm").string()}).code == kExitConfigError);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck passes and detects an injected sign flip") {
  const Result ok = cli({"gradcheck", "--porcelain"});
  CHECK_MESSAGE(ok.code == kExitOk, ok.out);
  const Result flipped = cli({"gradcheck", "--inject-sign-flip", "compositor"});
  CHECK(flipped.code == kExitCheckFailed);
  CHECK(flipped.out.find("FAIL  compositor") != std::string::npos);
  CHECK(flipped.err.find("compositor") != std::string::npos);
  CHECK(cli({"gradcheck", "--inject-sign-flip", "nonexistent"}).code == kExitConfigError);
}

TEST_CASE("protocol-check against an unreachable bridge exits 1") {
  const Result r = cli({"protocol-check", "--address", "127.0.0.1:1", "--timeout-ms", "200"});
  CHECK(r.code == kExitCheckFailed);
  CHECK(r.err.find("provider error") != std::string::npos);
  CHECK(cli({"protocol-check", "--address", "nohost"}).code == kExitConfigError);
}
