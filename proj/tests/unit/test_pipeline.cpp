#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/errors.hpp"
#include "csdpaint/pipeline.hpp"
#include "csdpaint/png_io.hpp"
#include "doctest.h"

using namespace csdpaint;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CSDPAINT_TEST_DATA;

TrainConfig small_config() {
  TrainConfig c;
  c.mesh = kData / "icosphere.obj";
  c.texture = {16, 16};
  c.iterations = 4;
  c.seed = 5;
  c.stages = {StageSpec{0, {8, 8}, 1.0}, StageSpec{1, {16, 16}, 0.5}};
  c.field.width = 16;
  c.optimizer.lr = 1e-2;
  c.object_class = "sphere";
  c.region = "cap";
  c.style = "striped";
  c.provider.teacher.region = HalfSpace{Vec3(0.0, 1.0, 0.0), 0.0};
  c.output.preview_views = 1;
  c.output.preview_resolution = {32, 32};
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csdpaint_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace

TEST_CASE("prompts fill the templates") {
  const PromptSet p = derive_prompts("cow", "hat", "colorful crochet");
  CHECK(p.y_l == "a gray cow with a yellow hat");
  CHECK(p.y_t == "a cow with a colorful crochet hat");
  CHECK(p.y_b == "a cow with a yellow hat");
  CHECK(p.y == "a cow with a colorful crochet hat");

  PromptTemplates t;
  t.texture = "{style} texture on the {region} of a {class}, verbatim";
  CHECK(derive_prompts("cow", "hat", "crochet", t).y_t == "crochet texture on the hat of a cow, verbatim");

  try {
    derive_prompts("cow", "", "crochet");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "prompt.region");
  }
}

TEST_CASE("zero iterations are rejected") {
  TrainConfig c = small_config();
  c.iterations = 0;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
}

TEST_CASE("independent texture-only run changes only the texture field") {
  TrainConfig c = small_config();
  c.mode = TrainMode::independent;
  c.weights = {0.0, 1.0, 0.0};
  Trainer tr(c);
  const FieldSet before = tr.fields();
  const StepMetrics m = tr.step();
  CHECK(m.updated == std::vector<std::string>{"texture"});
  CHECK(tr.fields().localization == before.localization);
  CHECK(tr.fields().background == before.background);
  CHECK_FALSE(tr.fields().texture == before.texture);
}

TEST_CASE("simultaneous mode routes texture gradients into the localization") {
  TrainConfig c = small_config();
  c.weights = {0.0, 1.0, 0.0};
  Trainer tr(c);
  const FieldSet before = tr.fields();
  const StepMetrics m = tr.step();
  CHECK(m.updated == std::vector<std::string>{"localization", "texture"});
  CHECK_FALSE(tr.fields().localization == before.localization);
}

TEST_CASE("background branch reaches the localization only when routed") {
  TrainConfig c = small_config();
  c.weights = {0.0, 0.0, 1.0};
  {
    Trainer tr(c);
    const FieldSet before = tr.fields();
    const StepMetrics m = tr.step();
    CHECK(m.updated == std::vector<std::string>{"background"});
    CHECK(tr.fields().localization == before.localization);
  }
  c.background_routes_to_localization = true;
  {
    Trainer tr(c);
    const FieldSet before = tr.fields();
    tr.step();
    CHECK_FALSE(tr.fields().localization == before.localization);
  }
  c.background_mode = BackgroundMode::off;
  {
    Trainer tr(c);
    const StepMetrics m = tr.step();
    CHECK(m.branches.empty());
    CHECK(m.updated.empty());
    CHECK_FALSE(tr.maps().background.has_value());
  }
}

TEST_CASE("series mode trains localization first, then freezes it") {
  TrainConfig c = small_config();
  c.mode = TrainMode::series;
  c.iterations = 4;
  Trainer tr(c);
  for (int i = 0; i < 2; ++i) {
    const StepMetrics m = tr.step();
    CHECK(m.branches == std::vector<Branch>{Branch::localization});
    CHECK(m.updated == std::vector<std::string>{"localization"});
  }
  const FieldParamsF frozen = tr.fields().localization;
  for (int i = 0; i < 2; ++i) {
    const StepMetrics m = tr.step();
    CHECK(m.branches == std::vector<Branch>{Branch::texture, Branch::background});
    CHECK(m.updated == std::vector<std::string>{"texture", "background"});
  }
  CHECK(tr.fields().localization == frozen);
}

TEST_CASE("shared-map background trains the texture field") {
  TrainConfig c = small_config();
  c.background_mode = BackgroundMode::shared_map;
  c.weights = {0.0, 0.0, 1.0};
  Trainer tr(c);
  const StepMetrics m = tr.step();
  CHECK(m.updated == std::vector<std::string>{"texture"});
  const MapSet maps = tr.maps();
  REQUIRE(maps.background.has_value());
  CHECK(maps.background->values == maps.texture.values);
}

TEST_CASE("metrics carry one record per branch and stage") {
  Trainer tr(small_config());
  const StepMetrics m = tr.step();
  CHECK(m.records.size() == 3 * 2);
  for (const auto& r : m.records) {
    CHECK(r.iteration == 0);
    CHECK(r.t >= 1);
    if (r.stage == 0) CHECK(r.s == 0);
  }
}

TEST_CASE("runs are bitwise deterministic") {
  const TrainConfig c = small_config();
  Trainer a(c);
  Trainer b(c);
  a.run();
  b.run();
  CHECK(a.fields().localization == b.fields().localization);
  CHECK(a.fields().texture == b.fields().texture);
  CHECK(a.fields().background == b.fields().background);
}

TEST_CASE("divergence aborts with the iteration index") {
  Trainer tr(small_config());
  tr.step();
  tr.fields().texture.layers[1].bias[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_WITH_AS(tr.step(), doctest::Contains("iteration 1"), DivergenceError);
}

TEST_CASE("provider stage resolutions must match the configuration") {
  const TrainConfig c = small_config();
  auto provider = std::make_unique<SingleTargetProvider>(std::vector<Image>{Image(3, {4, 4})},
                                                         make_schedule(ScheduleKind::cosine, 1000));
  CHECK_THROWS_AS(Trainer(c, std::move(provider)), ConfigError);
}

TEST_CASE("single iteration exports every artifact with a manifest") {
  TrainConfig c = small_config();
  c.iterations = 1;
  Trainer tr(c);
  tr.run();
  const fs::path out = fresh_dir("export");
  const auto manifest = export_artifacts(tr, out);
  std::set<std::string> listed;
  for (const auto& e : manifest) {
    listed.insert(e.path);
    CHECK(e.size > 0);
    CHECK(fs::file_size(out / e.path) == e.size);
  }
  for (const char* name : {"L_map.png", "T_map.png", "B_map.png", "T_prime_map.png", "L_map@2x.png",
                           "T_prime_map@2x.png", "localization.nf01", "texture.nf01", "background.nf01", "metrics.tsv",
                           "preview_edit_0.png", "preview_localization_0.png"}) {
    CHECK_MESSAGE(listed.contains(name), name);
  }
  for (const auto& entry : fs::directory_iterator(out)) {
    const std::string name = entry.path().filename().string();
    if (name != "manifest.tsv") CHECK_MESSAGE(listed.contains(name), name);
  }
  CHECK(first_line(out / "metrics.tsv") == "iter\tbranch\tstage\tgrad_norm\tt\ts");
  CHECK(first_line(out / "manifest.tsv").find('\t') != std::string::npos);
  const Image L = read_png(out / "L_map.png");
  CHECK(L.resolution() == c.texture);
  fs::remove_all(out);
}

TEST_CASE("2x export block means approximate the 1x export") {
  TrainConfig c = small_config();
  c.texture = {32, 32};
  c.stages = {StageSpec{0, {16, 16}, 1.0}, StageSpec{1, {32, 32}, 0.5}};
  Trainer tr(c);
  tr.run();
  const fs::path out = fresh_dir("supersample");
  write_maps(out, tr.fields(), tr.encoding(), tr.mesh(), c.texture, c.background_mode, c.colors, c.output);
  const TexelSurfaceMap tsm = invert_uv(tr.mesh(), c.texture);
  for (const char* stem : {"L_map", "T_map", "T_prime_map"}) {
    const Image lo = read_png(out / (std::string(stem) + ".png"));
    const Image hi = read_png(out / (std::string(stem) + "@2x.png"));
    REQUIRE(hi.resolution() == Resolution{64, 64});
    const Image down = area_downsample(hi, 2);
    double worst = 0.0;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        if (!tsm.at(y, x).valid) continue;
        // Skip texels at chart borders where the 2x block straddles the gutter.
        bool interior = true;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, 31);
            const int xx = std::clamp(x + dx, 0, 31);
            interior = interior && tsm.at(yy, xx).valid;
          }
        }
        if (!interior) continue;
        for (int ch = 0; ch < 3; ++ch) worst = std::max(worst, std::abs(down.at(ch, y, x) - lo.at(ch, y, x)));
      }
    }
    INFO(stem);
    CHECK(worst <= 0.1);
  }
  fs::remove_all(out);
}

TEST_CASE("re-export from checkpoints reproduces maps bitwise") {
  const TrainConfig c = small_config();
  Trainer tr(c);
  tr.run();
  const fs::path a = fresh_dir("reexport_a");
  const fs::path b = fresh_dir("reexport_b");
  export_artifacts(tr, a);
  FieldSet loaded;
  loaded.localization = read_checkpoint(a / "localization.nf01");
  loaded.texture = read_checkpoint(a / "texture.nf01");
  loaded.background = read_checkpoint(a / "background.nf01");
  CHECK(loaded.localization == tr.fields().localization);
  write_maps(b, loaded, tr.encoding(), tr.mesh(), c.texture, c.background_mode, c.colors, c.output);
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(b)) {
    CHECK(read_file_bytes(entry.path()) == read_file_bytes(a / entry.path().filename()));
    ++compared;
  }
  CHECK(compared == 8);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("independent mode produces different artifacts from simultaneous mode") {
  TrainConfig c = small_config();
  Trainer sim(c);
  sim.run();
  c.mode = TrainMode::independent;
  Trainer ind(c);
  ind.run();
  CHECK_FALSE(sim.maps().edit.values == ind.maps().edit.values);
}

TEST_CASE("texel IoU against hand-computed labels") {
  TexelSurfaceMap tsm;
  tsm.resolution = {1, 6};
  tsm.entries.assign(6, TexelEntry{});
  for (int i = 0; i < 5; ++i) tsm.entries[i].valid = true;
  const std::vector<double> values{0.9, 0.6, 0.2, 0.5, 0.1};
  const Map l = make_map(tsm, 1, values);
  // Predicted {0, 1, 3}; labels {0, 2, 3} over valid texels: |∩| = 2, |∪| = 4.
  const std::vector<std::uint8_t> labels{1, 0, 1, 1, 0, 1};
  CHECK(texel_iou(l, labels) == doctest::Approx(0.5).epsilon(1e-12));
}
