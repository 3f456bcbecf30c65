#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csdpaint/compositor.hpp"
#include "csdpaint/distill.hpp"
#include "csdpaint/fields.hpp"
#include "csdpaint/geometry.hpp"
#include "csdpaint/oracles.hpp"
#include "csdpaint/render.hpp"
#include "csdpaint/schedule.hpp"

namespace csdpaint {

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

// Placeholders: {class}, {region}, {style}.
struct PromptTemplates {
  std::string edit = "a {class} with a {style} {region}";
  std::string texture = "a {class} with a {style} {region}";
  std::string localization = "a gray {class} with a yellow {region}";
  std::string background = "a {class} with a yellow {region}";
};

struct PromptSet {
  std::string y;    // edit description
  std::string y_t;  // local texture
  std::string y_l;  // localization
  std::string y_b;  // background
  std::string object_class;
  std::string region;
};

PromptSet derive_prompts(const std::string& object_class, const std::string& region, const std::string& style,
                         const PromptTemplates& templates = {});

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class TrainMode { simultaneous, series, independent };
enum class BackgroundMode { separate_mlp, shared_map, off };
enum class ProviderKind { teacher, single_target, mixture, bridge };

TrainMode parse_train_mode(const std::string& name);
BackgroundMode parse_background_mode(const std::string& name);
ProviderKind parse_provider_kind(const std::string& name);
std::string to_string(TrainMode mode);
std::string to_string(BackgroundMode mode);
std::string to_string(ProviderKind kind);

struct BranchWeights {
  double localization = 1.0;
  double texture = 1.0;
  double background = 1.0;
};

struct EncodingConfig {
  EncodingKind kind = EncodingKind::log_linear;
  int bands = 6;
  bool include_input = true;
  double gaussian_scale = 1.0;
};

struct FieldConfig {
  int width = 256;
  HiddenActivation hidden = HiddenActivation::relu;
  double head_scale = 1e-2;
  EncodingConfig encoding;
};

struct ProviderConfig {
  ProviderKind kind = ProviderKind::teacher;
  TeacherRecipe teacher;
  std::vector<Image> targets;  // single_target: one per stage
  MixtureOracle mixture;
  std::string address;  // bridge: host:port
};

struct ExportConfig {
  int super_sample = 2;
  int png_bits = 8;
  Resolution preview_resolution{128, 128};
  int preview_views = 4;
};

struct TrainConfig {
  std::filesystem::path mesh;
  bool normalize_mesh = true;
  Resolution texture{128, 128};
  int iterations = 2000;
  std::uint64_t seed = 0;

  TrainMode mode = TrainMode::simultaneous;
  double series_split = 0.5;  // fraction of iterations spent on the localization phase
  BackgroundMode background_mode = BackgroundMode::separate_mlp;
  bool background_routes_to_localization = false;
  BranchWeights weights;

  std::vector<StageSpec> stages;
  PyramidMode pyramid = PyramidMode::direct;

  ScheduleKind schedule = ScheduleKind::cosine;
  int timesteps = 1000;
  TimestepPolicy policy;
  WeightKind weighting = WeightKind::constant;
  double s_max = 0.5;

  FieldConfig field;
  AdamHyper optimizer{1e-3, 0.9, 0.999, 1e-8};

  CameraPolicy camera;
  Range background_gray{0.2, 0.8};
  RasterOptions raster;
  BlendColors colors;

  std::string object_class = "object";
  std::string region = "region";
  std::string style = "textured";
  PromptTemplates templates;

  ProviderConfig provider;
  ExportConfig output;
};

// Default two-stage setup (λ¹ = 1, λ² = 0.5).
std::vector<StageSpec> default_stages();

// Checks every invariant; throws ConfigError naming the key.
void validate_config(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Branch { localization = 0, texture = 1, background = 2 };
std::string to_string(Branch branch);

struct MetricRecord {
  int iteration = 0;
  Branch branch = Branch::localization;
  int stage = 0;
  double grad_norm = 0.0;  // λ-weighted image-space gradient norm
  int t = 0;
  int s = 0;
};

struct StepMetrics {
  int iteration = 0;
  std::vector<MetricRecord> records;
  std::vector<Branch> branches;            // branches evaluated this step
  std::vector<double> texture_grad_norms;  // per evaluated branch, after branch weighting
  std::vector<std::string> updated;        // MLPs stepped
  std::vector<std::string> skipped;        // MLPs whose update was skipped (non-finite gradient)
};

struct FieldSet {
  FieldParamsF localization;
  FieldParamsF texture;
  FieldParamsF background;
};

struct MapSet {
  Map localization;
  Map texture;
  std::optional<Map> background;  // absent when background_mode = off
  Map edit;                       // T′ = L·T + (1 − L)·base
};

// Loads (and optionally normalizes) the configured mesh; a missing file is a
// ConfigError on "mesh".
Mesh load_run_mesh(const TrainConfig& cfg);
Encoding make_encoding(const TrainConfig& cfg);
FieldSet init_fields(const TrainConfig& cfg, int input_dim);

// Builds the configured provider. The teacher binds its per-branch targets
// to the derived prompts.
std::unique_ptr<ScoreProvider> make_provider(const TrainConfig& cfg, const Mesh& mesh, const TexelSurfaceMap& tsm,
                                             const PromptSet& prompts, NoiseSchedule& schedule);

class Trainer {
 public:
  // Uses `provider` when given, otherwise builds one from the config.
  explicit Trainer(TrainConfig cfg, std::unique_ptr<ScoreProvider> provider = nullptr);

  StepMetrics step();
  void run();

  int iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  const Mesh& mesh() const { return mesh_; }
  const TexelSurfaceMap& tsm() const { return tsm_; }
  const Encoding& encoding() const { return encoding_; }
  const PromptSet& prompts() const { return prompts_; }
  const FieldSet& fields() const { return fields_; }
  FieldSet& fields() { return fields_; }
  ScoreProvider& provider() { return *provider_; }
  const std::vector<MetricRecord>& metrics() const { return metrics_; }

  MapSet maps() const;

 private:
  bool series_phase_one() const;

  TrainConfig cfg_;
  Mesh mesh_;
  TexelSurfaceMap tsm_;
  Encoding encoding_;
  PromptSet prompts_;
  DistillSettings distill_;
  std::vector<Resolution> stage_res_;
  std::unique_ptr<ScoreProvider> provider_;
  FieldSet fields_;
  AdamState<float> adam_l_;
  AdamState<float> adam_t_;
  AdamState<float> adam_b_;
  int iteration_ = 0;
  std::vector<MetricRecord> metrics_;
};

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

MapSet bake_maps(const FieldSet& fields, const Encoding& enc, const TexelSurfaceMap& tsm,
                 BackgroundMode background_mode, const BlendColors& colors);

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::uintmax_t size = 0;
};

// Writes L/T/B/T′ PNGs at native and super-sampled resolution.
std::vector<ManifestEntry> write_maps(const std::filesystem::path& out_dir, const FieldSet& fields,
                                      const Encoding& enc, const Mesh& mesh, Resolution texture,
                                      BackgroundMode background_mode, const BlendColors& colors,
                                      const ExportConfig& output);

// Maps, checkpoints, metric log and preview renders, then manifest.tsv
// listing them plus any `extra` files already present in `out_dir`.
std::vector<ManifestEntry> export_artifacts(const Trainer& trainer, const std::filesystem::path& out_dir,
                                            const std::vector<std::string>& extra = {});

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRecord>& records);

// Thresholded (0.5) localization vs labels over valid texels.
double texel_iou(const Map& localization, const std::vector<std::uint8_t>& labels);

}  // namespace csdpaint
