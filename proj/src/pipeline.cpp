#include "csdpaint/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "csdpaint/bridge.hpp"
#include "csdpaint/errors.hpp"
#include "csdpaint/png_io.hpp"

namespace csdpaint {

namespace {

std::string fill_template(std::string text, const std::string& key, const std::string& value) {
  const std::string needle = "{" + key + "}";
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + value.size())) {
    text.replace(pos, needle.size(), value);
  }
  return text;
}

std::string fill(const std::string& tmpl, const std::string& cls, const std::string& region,
                 const std::string& style) {
  return fill_template(fill_template(fill_template(tmpl, "class", cls), "region", region), "style", style);
}

// Stream labels for derive_rng.
constexpr std::uint64_t kInitStream = 0x696e6974;  // "init"
constexpr std::uint64_t kViewStream = 0x76696577;  // "view"
constexpr std::uint64_t kCsdStream = 0x637364;     // "csd"
constexpr std::uint64_t kEncStream = 0x656e63;     // "enc"

}  // namespace

PromptSet derive_prompts(const std::string& object_class, const std::string& region, const std::string& style,
                         const PromptTemplates& templates) {
  if (object_class.empty()) throw ConfigError("prompt.object_class", "must not be empty");
  if (region.empty()) throw ConfigError("prompt.region", "must not be empty");
  if (style.empty()) throw ConfigError("prompt.style", "must not be empty");
  PromptSet p;
  p.object_class = object_class;
  p.region = region;
  p.y = fill(templates.edit, object_class, region, style);
  p.y_t = fill(templates.texture, object_class, region, style);
  p.y_l = fill(templates.localization, object_class, region, style);
  p.y_b = fill(templates.background, object_class, region, style);
  const std::pair<const std::string*, const char*> all[] = {
      {&p.y, "edit"}, {&p.y_t, "texture"}, {&p.y_l, "localization"}, {&p.y_b, "background"}};
  for (const auto& [text, key] : all) {
    if (text->empty()) throw ConfigError(std::string("prompt.templates.") + key, "template produced an empty prompt");
  }
  return p;
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "simultaneous") return TrainMode::simultaneous;
  if (name == "series") return TrainMode::series;
  if (name == "independent") return TrainMode::independent;
  throw ConfigError("mode", "unknown mode '" + name + "' (expected simultaneous, series or independent)");
}

BackgroundMode parse_background_mode(const std::string& name) {
  if (name == "separate_mlp") return BackgroundMode::separate_mlp;
  if (name == "shared_map") return BackgroundMode::shared_map;
  if (name == "off") return BackgroundMode::off;
  throw ConfigError("background_mode", "unknown background mode '" + name + "' (expected separate_mlp, shared_map or off)");
}

ProviderKind parse_provider_kind(const std::string& name) {
  if (name == "teacher") return ProviderKind::teacher;
  if (name == "single_target") return ProviderKind::single_target;
  if (name == "mixture") return ProviderKind::mixture;
  if (name == "bridge") return ProviderKind::bridge;
  throw ConfigError("provider.kind", "unknown provider '" + name + "' (expected teacher, single_target, mixture or bridge)");
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::simultaneous: return "simultaneous";
    case TrainMode::series: return "series";
    case TrainMode::independent: return "independent";
  }
  return "?";
}

std::string to_string(BackgroundMode mode) {
  switch (mode) {
    case BackgroundMode::separate_mlp: return "separate_mlp";
    case BackgroundMode::shared_map: return "shared_map";
    case BackgroundMode::off: return "off";
  }
  return "?";
}

std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::teacher: return "teacher";
    case ProviderKind::single_target: return "single_target";
    case ProviderKind::mixture: return "mixture";
    case ProviderKind::bridge: return "bridge";
  }
  return "?";
}

std::string to_string(Branch branch) {
  switch (branch) {
    case Branch::localization: return "localization";
    case Branch::texture: return "texture";
    case Branch::background: return "background";
  }
  return "?";
}

std::vector<StageSpec> default_stages() {
  return {StageSpec{0, {64, 64}, 1.0}, StageSpec{1, {128, 128}, 0.5}};
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.mesh.empty()) throw ConfigError("mesh", "a mesh path is required");
  if (cfg.iterations < 1) throw ConfigError("iterations", "must be at least 1");
  if (cfg.texture.height < 1 || cfg.texture.width < 1) throw ConfigError("texture", "resolution must be positive");
  if (!(cfg.series_split > 0.0 && cfg.series_split < 1.0)) throw ConfigError("series_split", "must lie in (0, 1)");
  const std::pair<double, const char*> weights[] = {{cfg.weights.localization, "weights.localization"},
                                                    {cfg.weights.texture, "weights.texture"},
                                                    {cfg.weights.background, "weights.background"}};
  for (const auto& [w, key] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError(key, "branch weight must be finite and >= 0");
  }
  validate_stages(cfg.stages);
  if (cfg.pyramid == PyramidMode::downsample) {
    const Resolution top = cfg.stages.back().resolution;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
      const Resolution r = cfg.stages[i].resolution;
      if (top.height % r.height != 0 || top.width % r.width != 0 ||
          top.height / r.height != top.width / r.width) {
        throw ConfigError("stages." + std::to_string(i) + ".resolution",
                          "downsample pyramid needs integer factors of the top stage");
      }
    }
  }
  if (cfg.timesteps < 1) throw ConfigError("schedule.T", "must be at least 1");
  validate_policy(cfg.policy);
  if (!(cfg.s_max > cfg.policy.t_min && cfg.s_max <= 1.0)) throw ConfigError("schedule.s_max", "must lie in (t_min, 1]");
  if (cfg.field.width < 1) throw ConfigError("field.width", "must be at least 1");
  if (cfg.field.encoding.bands < 1) throw ConfigError("field.encoding.bands", "must be at least 1");
  if (!(cfg.optimizer.lr > 0.0)) throw ConfigError("optimizer.lr", "must be > 0");
  validate_camera_policy(cfg.camera);
  if (!(cfg.background_gray.min >= 0.0 && cfg.background_gray.min <= cfg.background_gray.max &&
        cfg.background_gray.max <= 1.0)) {
    throw ConfigError("background_gray", "must be a range inside [0, 1]");
  }
  validate_colors(cfg.colors);
  if (cfg.output.super_sample < 1) throw ConfigError("export.super_sample", "must be at least 1");
  if (cfg.output.png_bits != 8 && cfg.output.png_bits != 16) throw ConfigError("export.png_bits", "must be 8 or 16");
  if (cfg.provider.kind == ProviderKind::bridge && cfg.provider.address.empty()) {
    throw ConfigError("provider.address", "bridge provider needs host:port");
  }
}

Mesh load_run_mesh(const TrainConfig& cfg) {
  if (!std::filesystem::is_regular_file(cfg.mesh)) {
    throw ConfigError("mesh", "mesh file '" + cfg.mesh.string() + "' does not exist");
  }
  Mesh mesh = load_mesh(cfg.mesh);
  return cfg.normalize_mesh ? normalized_to_unit_cube(std::move(mesh)) : mesh;
}

Encoding make_encoding(const TrainConfig& cfg) {
  const auto& e = cfg.field.encoding;
  if (e.kind == EncodingKind::log_linear) return Encoding::log_linear(e.bands, e.include_input);
  Rng rng = derive_rng(cfg.seed, {kEncStream});
  return Encoding::gaussian(e.bands, e.gaussian_scale, rng(), e.include_input);
}

FieldSet init_fields(const TrainConfig& cfg, int input_dim) {
  auto make = [&](HeadKind head, std::uint64_t k) {
    Rng rng = derive_rng(cfg.seed, {kInitStream, k});
    const FieldShape shape{input_dim, cfg.field.width, head, cfg.field.hidden};
    return init_field<float>(shape, rng, cfg.field.head_scale);
  };
  return {make(HeadKind::probability, 0), make(HeadKind::color, 1), make(HeadKind::color, 2)};
}

std::unique_ptr<ScoreProvider> make_provider(const TrainConfig& cfg, const Mesh& mesh, const TexelSurfaceMap& tsm,
                                             const PromptSet& prompts, NoiseSchedule& schedule) {
  std::vector<Resolution> res;
  for (const auto& s : cfg.stages) res.push_back(s.resolution);
  std::unique_ptr<ScoreProvider> provider;
  switch (cfg.provider.kind) {
    case ProviderKind::teacher: {
      auto teacher = std::make_unique<PhotometricTeacher>(mesh, res, schedule, cfg.raster);
      const TeacherTargets targets = build_teacher_targets(tsm, cfg.provider.teacher, cfg.colors);
      teacher->bind(prompts.y_l, targets.localization_view.values);
      teacher->bind(prompts.y_t, targets.texture_view.values);
      teacher->bind(prompts.y_b, targets.background_view.values);
      provider = std::move(teacher);
      break;
    }
    case ProviderKind::single_target:
      provider = std::make_unique<SingleTargetProvider>(cfg.provider.targets, schedule);
      break;
    case ProviderKind::mixture:
      provider = std::make_unique<MixtureProvider>(cfg.provider.mixture, schedule);
      break;
    case ProviderKind::bridge: {
      BridgeOptions opt = parse_address(cfg.provider.address);
      auto remote = std::make_unique<RemoteProvider>(opt);
      schedule = remote->info().schedule;
      provider = std::move(remote);
      break;
    }
  }
  if (provider->stage_resolutions() != res) {
    throw ConfigError("stages", "provider '" + provider->name() + "' serves stages " +
                                    format_resolutions(provider->stage_resolutions()) + ", configured " +
                                    format_resolutions(res));
  }
  return provider;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, std::unique_ptr<ScoreProvider> provider) : cfg_(std::move(cfg)) {
  validate_config(cfg_);
  mesh_ = load_run_mesh(cfg_);
  tsm_ = invert_uv(mesh_, cfg_.texture);
  if (tsm_.valid_count() == 0) throw InputError("UV atlas covers no texel centers at " + to_string(cfg_.texture));
  encoding_ = make_encoding(cfg_);
  prompts_ = derive_prompts(cfg_.object_class, cfg_.region, cfg_.style, cfg_.templates);
  for (const auto& s : cfg_.stages) stage_res_.push_back(s.resolution);

  distill_.schedule = make_schedule(cfg_.schedule, cfg_.timesteps);
  distill_.policy = cfg_.policy;
  distill_.weighting = cfg_.weighting;
  distill_.s_max = cfg_.s_max;
  if (provider) {
    if (provider->stage_resolutions() != stage_res_) {
      throw ConfigError("stages", "provider stage resolutions do not match the configured stages");
    }
    provider_ = std::move(provider);
  } else {
    provider_ = make_provider(cfg_, mesh_, tsm_, prompts_, distill_.schedule);
  }

  fields_ = init_fields(cfg_, encoding_.output_dim());
  adam_l_ = make_adam_state(fields_.localization, cfg_.optimizer);
  adam_t_ = make_adam_state(fields_.texture, cfg_.optimizer);
  adam_b_ = make_adam_state(fields_.background, cfg_.optimizer);
}

bool Trainer::series_phase_one() const {
  const int split = static_cast<int>(std::lround(cfg_.series_split * cfg_.iterations));
  return cfg_.mode == TrainMode::series && iteration_ < split;
}

StepMetrics Trainer::step() {
  const int it = iteration_;
  StepMetrics metrics;
  metrics.iteration = it;
  try {
    const bool series = cfg_.mode == TrainMode::series;
    const bool phase_one = series_phase_one();
    const bool independent = cfg_.mode == TrainMode::independent;
    const bool separate_bg = cfg_.background_mode == BackgroundMode::separate_mlp;

    const bool run_l = cfg_.weights.localization > 0.0 && (!series || phase_one);
    const bool run_t = cfg_.weights.texture > 0.0 && (!series || !phase_one);
    const bool run_b =
        cfg_.weights.background > 0.0 && cfg_.background_mode != BackgroundMode::off && (!series || !phase_one);

    // Which parameters each branch may update.
    const bool l_trainable = !series || phase_one;
    const bool t_to_l = run_t && cfg_.mode == TrainMode::simultaneous;
    const bool b_to_l = run_b && cfg_.mode == TrainMode::simultaneous && cfg_.background_routes_to_localization;
    const bool update_l = l_trainable && (run_l || t_to_l || b_to_l);
    const bool update_t = run_t || (run_b && !separate_bg);
    const bool update_b = run_b && separate_bg;

    Rng view_rng = derive_rng(cfg_.seed, {kViewStream, static_cast<std::uint64_t>(it)});
    const Camera cam = sample_camera(view_rng, cfg_.camera);
    std::uniform_real_distribution<double> gray_dist(cfg_.background_gray.min, cfg_.background_gray.max);
    const double gray = cfg_.background_gray.min == cfg_.background_gray.max ? cfg_.background_gray.min
                                                                             : gray_dist(view_rng);
    const Rgb backdrop{gray, gray, gray};

    const bool need_l = run_l || (run_t && !independent) || run_b;
    const bool need_t = run_t || (run_b && !separate_bg);
    std::optional<BakeResult<float>> bl, bt, bb;
    if (need_l) bl = bake_map_traced(fields_.localization, encoding_, tsm_);
    if (need_t) bt = bake_map_traced(fields_.texture, encoding_, tsm_);
    if (update_b) bb = bake_map_traced(fields_.background, encoding_, tsm_);

    Image grad_l(1, cfg_.texture);
    Image grad_t(3, cfg_.texture);
    Image grad_b(3, cfg_.texture);

    distill_.iteration = it;
    auto run_branch = [&](Branch branch, const Map& texture, const std::string& prompt, double w) {
      const ViewPyramid pyramid =
          render_pyramid(mesh_, texture.values, cam, stage_res_, backdrop, cfg_.raster, cfg_.pyramid);
      const Conditioning cond{prompt, cam, backdrop};
      Rng seed_rng = derive_rng(cfg_.seed, {kCsdStream, static_cast<std::uint64_t>(it),
                                            static_cast<std::uint64_t>(branch)});
      const GradReport report = csd_total(*provider_, pyramid.images(), cond, cfg_.stages, seed_rng(), distill_);
      for (std::size_t i = 0; i < report.grads.size(); ++i) {
        metrics.records.push_back({it, branch, static_cast<int>(i), report.norms[i], report.t[i], report.s[i]});
      }
      Image g = backprop_pyramid(pyramid, report.grads);
      if (w != 1.0) {
        for (double& v : g.data()) v *= w;
      }
      metrics.branches.push_back(branch);
      metrics.texture_grad_norms.push_back(l2_norm(g));
      return g;
    };

    if (run_l) {
      const Map tex = highlight_blend(bl->map, cfg_.colors);
      const Image g = run_branch(Branch::localization, tex, prompts_.y_l, cfg_.weights.localization);
      axpy(1.0, highlight_blend_backward(cfg_.colors, g), grad_l);
    }
    if (run_t) {
      if (independent) {
        const Image g = run_branch(Branch::texture, bt->map, prompts_.y_t, cfg_.weights.texture);
        axpy(1.0, g, grad_t);
      } else {
        const Map tex = mask_texture(bt->map, bl->map, cfg_.colors.neutral_base);
        const Image g = run_branch(Branch::texture, tex, prompts_.y_t, cfg_.weights.texture);
        const MaskGrads mg = mask_texture_backward(bt->map, bl->map, cfg_.colors.neutral_base, g);
        axpy(1.0, mg.texture, grad_t);
        if (t_to_l) axpy(1.0, mg.localization, grad_l);
      }
    }
    if (run_b) {
      const Map& background = separate_bg ? bb->map : bt->map;
      const Map tex = background_composite(bl->map, background, cfg_.colors);
      const Image g = run_branch(Branch::background, tex, prompts_.y_b, cfg_.weights.background);
      const CompositeGrads cg = background_composite_backward(bl->map, background, cfg_.colors, g);
      axpy(1.0, cg.background, separate_bg ? grad_b : grad_t);
      if (b_to_l) axpy(1.0, cg.localization, grad_l);
    }

    auto update = [&](const char* name, FieldParamsF& params, const BakeResult<float>& bake, const Image& grad,
                      AdamState<float>& adam) {
      const FieldGrads<float> g = bake_backward(params, bake, grad);
      if (adam_step(params, g, adam)) {
        metrics.updated.emplace_back(name);
      } else {
        metrics.skipped.emplace_back(name);
      }
      if (!params.all_finite()) throw DivergenceError(std::string("non-finite parameters in the ") + name + " field");
    };
    if (update_l) update("localization", fields_.localization, *bl, grad_l, adam_l_);
    if (update_t) update("texture", fields_.texture, *bt, grad_t, adam_t_);
    if (update_b) update("background", fields_.background, *bb, grad_b, adam_b_);
  } catch (const DivergenceError& e) {
    throw DivergenceError("iteration " + std::to_string(it) + ": " + e.what());
  }
  metrics_.insert(metrics_.end(), metrics.records.begin(), metrics.records.end());
  ++iteration_;
  return metrics;
}

void Trainer::run() {
  while (iteration_ < cfg_.iterations) step();
}

MapSet Trainer::maps() const {
  return bake_maps(fields_, encoding_, tsm_, cfg_.background_mode, cfg_.colors);
}

// ---------------------------------------------------------------------------

MapSet bake_maps(const FieldSet& fields, const Encoding& enc, const TexelSurfaceMap& tsm,
                 BackgroundMode background_mode, const BlendColors& colors) {
  MapSet maps;
  maps.localization = bake_map(fields.localization, enc, tsm);
  maps.texture = bake_map(fields.texture, enc, tsm);
  if (background_mode == BackgroundMode::separate_mlp) {
    maps.background = bake_map(fields.background, enc, tsm);
  } else if (background_mode == BackgroundMode::shared_map) {
    maps.background = maps.texture;
  }
  maps.edit = mask_texture(maps.texture, maps.localization, colors.neutral_base);
  return maps;
}

namespace {

ManifestEntry entry(const std::filesystem::path& out_dir, const std::string& rel) {
  return {rel, std::filesystem::file_size(out_dir / rel)};
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  }
}

}  // namespace

std::vector<ManifestEntry> write_maps(const std::filesystem::path& out_dir, const FieldSet& fields,
                                      const Encoding& enc, const Mesh& mesh, Resolution texture,
                                      BackgroundMode background_mode, const BlendColors& colors,
                                      const ExportConfig& output) {
  ensure_dir(out_dir);
  std::vector<ManifestEntry> written;
  auto emit = [&](const MapSet& maps, const std::string& suffix) {
    auto put = [&](const std::string& stem, const Map& map) {
      const std::string rel = stem + suffix + ".png";
      write_png(out_dir / rel, map.values, output.png_bits);
      written.push_back(entry(out_dir, rel));
    };
    put("L_map", maps.localization);
    put("T_map", maps.texture);
    if (maps.background) put("B_map", *maps.background);
    put("T_prime_map", maps.edit);
  };
  emit(bake_maps(fields, enc, invert_uv(mesh, texture), background_mode, colors), "");
  if (output.super_sample > 1) {
    const int k = output.super_sample;
    const Resolution hi{texture.height * k, texture.width * k};
    emit(bake_maps(fields, enc, invert_uv(mesh, hi), background_mode, colors), "@" + std::to_string(k) + "x");
  }
  return written;
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "iter\tbranch\tstage\tgrad_norm\tt\ts\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.9g", r.grad_norm);
    out << r.iteration << '\t' << to_string(r.branch) << '\t' << r.stage << '\t' << buf << '\t' << r.t << '\t' << r.s
        << '\n';
  }
  if (!out) throw InputError("cannot write " + path.string());
}

std::vector<ManifestEntry> export_artifacts(const Trainer& trainer, const std::filesystem::path& out_dir,
                                            const std::vector<std::string>& extra) {
  const TrainConfig& cfg = trainer.config();
  std::vector<ManifestEntry> manifest = write_maps(out_dir, trainer.fields(), trainer.encoding(), trainer.mesh(),
                                                   cfg.texture, cfg.background_mode, cfg.colors, cfg.output);

  auto ckpt = [&](const std::string& rel, const FieldParamsF& params) {
    write_checkpoint(params, out_dir / rel);
    manifest.push_back(entry(out_dir, rel));
  };
  ckpt("localization.nf01", trainer.fields().localization);
  ckpt("texture.nf01", trainer.fields().texture);
  if (cfg.background_mode == BackgroundMode::separate_mlp) ckpt("background.nf01", trainer.fields().background);

  write_metrics(out_dir / "metrics.tsv", trainer.metrics());
  manifest.push_back(entry(out_dir, "metrics.tsv"));

  // Previews: evenly spaced azimuths at a fixed elevation and mid radius.
  const MapSet maps = trainer.maps();
  const Map highlight = highlight_blend(maps.localization, cfg.colors);
  const double radius = 0.5 * (cfg.camera.radius.min + cfg.camera.radius.max);
  for (int v = 0; v < cfg.output.preview_views; ++v) {
    Camera cam;
    cam.azimuth = 2.0 * std::numbers::pi * v / cfg.output.preview_views;
    cam.elevation = 0.3;
    cam.radius = radius;
    cam.fov_y = cfg.camera.fov_y;
    cam.look_at = cfg.camera.look_at;
    const Rgb backdrop{1.0, 1.0, 1.0};
    const std::string idx = std::to_string(v);
    const std::pair<std::string, const Map*> views[] = {{"preview_edit_" + idx + ".png", &maps.edit},
                                                        {"preview_localization_" + idx + ".png", &highlight}};
    for (const auto& [rel, map] : views) {
      const RenderedView view =
          rasterize(trainer.mesh(), map->values, cam, cfg.output.preview_resolution, backdrop, cfg.raster);
      write_png(out_dir / rel, view.image, 8);
      manifest.push_back(entry(out_dir, rel));
    }
  }

  for (const auto& rel : extra) {
    if (!std::filesystem::exists(out_dir / rel)) throw InputError("manifest extra file missing: " + rel);
    manifest.push_back(entry(out_dir, rel));
  }
  std::sort(manifest.begin(), manifest.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  {
    std::ofstream out(out_dir / "manifest.tsv");
    if (!out) throw InputError("cannot write " + (out_dir / "manifest.tsv").string());
    for (const auto& e : manifest) out << e.path << '\t' << e.size << '\n';
  }
  return manifest;
}

double texel_iou(const Map& localization, const std::vector<std::uint8_t>& labels) {
  if (labels.size() != localization.resolution().pixels()) throw ShapeError("texel_iou: label count mismatch");
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto plane = localization.values.plane(0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!localization.valid[i]) continue;
    const bool pred = plane[i] >= 0.5;
    const bool truth = labels[i] != 0;
    inter += pred && truth;
    uni += pred || truth;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace csdpaint
