#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csdpaint/compositor.hpp"
#include "csdpaint/distill.hpp"
#include "csdpaint/fields.hpp"
#include "csdpaint/geometry.hpp"
#include "csdpaint/render.hpp"
#include "csdpaint/schedule.hpp"

namespace csdpaint {

// ---------------------------------------------------------------------------
// Closed-form denoisers
// ---------------------------------------------------------------------------

// Exact ε-prediction when the data distribution is the single point μ:
// ε̂ = (z − α_t μ) / σ_t. Rejects t = 0.
Image single_target_eps(const Image& z, int t, const Image& mu, const NoiseSchedule& sched);

struct MixtureComponent {
  double weight = 1.0;
  std::vector<Image> targets;  // one per stage
};

struct MixtureOracle {
  std::vector<MixtureComponent> components;

  void validate(std::span<const Resolution> stages) const;
};

struct Posterior {
  std::vector<double> p;
  bool fallback = false;  // every log-weight was non-finite; argmax used
};

// p_k ∝ w_k exp(−‖z − α_t μ_kⁱ‖² / 2σ_t²), computed in the log domain.
Posterior mixture_posterior(const Image& z, int t, const MixtureOracle& oracle, int stage, const NoiseSchedule& sched);
Image mixture_eps(const Image& z, int t, const MixtureOracle& oracle, int stage, const NoiseSchedule& sched);

// Joint posterior over the high-resolution image at t and the conditioning
// image (stage − 1 targets) at s.
Posterior cascaded_posterior(const Image& z_hi, int t, const Image& z_lo, int s, const MixtureOracle& oracle,
                             int stage, const NoiseSchedule& sched);
Image cascaded_eps(const Image& z_hi, int t, const Image& z_lo, int s, const MixtureOracle& oracle, int stage,
                   const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

class SingleTargetProvider final : public ScoreProvider {
 public:
  SingleTargetProvider(std::vector<Image> targets, NoiseSchedule sched);

  std::string name() const override { return "single_target"; }
  std::vector<Resolution> stage_resolutions() const override;
  Image base_predict(const Image& z, int t, const Conditioning& cond) override;
  Image super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s, const Conditioning& cond) override;

 private:
  std::vector<Image> targets_;
  NoiseSchedule sched_;
};

class MixtureProvider final : public ScoreProvider {
 public:
  MixtureProvider(MixtureOracle oracle, NoiseSchedule sched);

  std::string name() const override { return "mixture"; }
  std::vector<Resolution> stage_resolutions() const override;
  Image base_predict(const Image& z, int t, const Conditioning& cond) override;
  Image super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s, const Conditioning& cond) override;

  const MixtureOracle& oracle() const { return oracle_; }

 private:
  MixtureOracle oracle_;
  NoiseSchedule sched_;
};

// Per-view single-target oracle: the target for a prompt is a render of a
// bound ground-truth texture from the conditioning camera and background.
class PhotometricTeacher final : public ScoreProvider {
 public:
  PhotometricTeacher(Mesh mesh, std::vector<Resolution> stages, NoiseSchedule sched, RasterOptions raster = {});

  void bind(const std::string& prompt, Image texture);
  Image target(const Conditioning& cond, int stage) const;

  std::string name() const override { return "photometric_teacher"; }
  std::vector<Resolution> stage_resolutions() const override { return stages_; }
  Image base_predict(const Image& z, int t, const Conditioning& cond) override;
  Image super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s, const Conditioning& cond) override;

 private:
  Mesh mesh_;
  std::vector<Resolution> stages_;
  NoiseSchedule sched_;
  RasterOptions raster_;
  std::map<std::string, Image> textures_;
};

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

// Points with p·axis > offset.
struct HalfSpace {
  Vec3 axis = Vec3(0.0, 0.0, 1.0);
  double offset = 0.0;

  bool contains(const Vec3& p) const { return p.dot(axis) > offset; }
};

struct StyleRecipe {
  enum class Kind { solid, stripes } kind = Kind::stripes;
  Rgb color_a{0.85, 0.15, 0.1};
  Rgb color_b{0.1, 0.25, 0.85};
  Vec3 axis = Vec3(0.0, 1.0, 0.0);
  double frequency = 6.0;  // stripe pairs per unit length
};

struct TeacherRecipe {
  HalfSpace region;
  StyleRecipe style;
  std::optional<HalfSpace> distractor;  // characteristic feature outside the region
  Rgb distractor_color{0.0, 0.0, 1.0};
};

// Ground-truth maps and the three per-branch target textures.
struct TeacherTargets {
  Map localization;       // 1 channel, binary
  Map style;              // 3 channels
  Map background;         // 3 channels
  Map localization_view;  // highlight blend of the ground-truth localization
  Map texture_view;       // masked style (plus distractor)
  Map background_view;    // highlight + background (plus distractor)
};

std::vector<std::uint8_t> region_labels(const TexelSurfaceMap& tsm, const HalfSpace& region);
TeacherTargets build_teacher_targets(const TexelSurfaceMap& tsm, const TeacherRecipe& recipe,
                                     const BlendColors& colors);

// Procedural target images.
Image solid_image(Resolution res, const Rgb& color);
Image checkerboard_image(Resolution res, int cells, const Rgb& a, const Rgb& b);
Image blob_image(Resolution res, double cx, double cy, double radius, const Rgb& color, const Rgb& backdrop);

}  // namespace csdpaint
