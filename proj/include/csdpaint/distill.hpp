#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csdpaint/image.hpp"
#include "csdpaint/render.hpp"
#include "csdpaint/rng.hpp"
#include "csdpaint/schedule.hpp"

namespace csdpaint {

// What a provider is conditioned on besides the noisy images. Real models use
// only the prompt; analytic teachers may also use the view.
struct Conditioning {
  std::string prompt;
  std::optional<Camera> view;
  Rgb background{0.5, 0.5, 0.5};
};

// ε-prediction interface of a cascaded denoiser. Stage indices are
// zero-based: stage 0 is the base model, stage i ≥ 1 a super-resolution
// stage conditioned on a noised image at stage i − 1's resolution. Providers
// return values only, so score distillation never differentiates them.
class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;

  virtual std::string name() const = 0;
  virtual std::vector<Resolution> stage_resolutions() const = 0;

  virtual Image base_predict(const Image& z, int t, const Conditioning& cond) = 0;
  virtual Image super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s,
                              const Conditioning& cond) = 0;
};

struct StageSpec {
  int index = 0;  // zero-based; 0 is the base stage
  Resolution resolution;
  double lambda = 1.0;
};

void validate_stages(std::span<const StageSpec> stages);

struct DistillSettings {
  NoiseSchedule schedule = make_schedule(ScheduleKind::cosine, 1000);
  TimestepPolicy policy;
  WeightKind weighting = WeightKind::constant;
  double s_max = 0.5;  // cap on the conditioning timestep, fraction of T
  int iteration = 0;   // for annealed timestep windows
};

struct StageGrad {
  Image grad;
  int t = 0;
  int s = 0;  // 0 for the base stage
};

// w(t)·(ε̂(z_t, t) − ε) with z_t = α_t x + σ_t ε. Draws t, then ε.
StageGrad sds_grad(ScoreProvider& provider, const Image& x, const Conditioning& cond, Rng& rng,
                   const DistillSettings& settings);

// w(t)·(ε̂ⁱ(zⁱ_t, t, zⁱ⁻¹_s, s) − εⁱ). Draws t, s, εⁱ, εⁱ⁻¹ in that order. The
// low-resolution image is conditioning only and receives no gradient.
StageGrad csd_stage_grad(ScoreProvider& provider, int stage, const Image& x_hi, const Image& x_lo,
                         const Conditioning& cond, Rng& rng, const DistillSettings& settings);

struct GradReport {
  std::vector<Image> grads;  // λ-weighted, one per stage
  std::vector<double> norms;
  std::vector<int> t;
  std::vector<int> s;
};

// Random stream used for stage `stage` of csd_total under `seed`.
Rng stage_rng(std::uint64_t seed, int stage);

// λ-weighted gradients for every stage of an image pyramid. Stages with
// λ = 0 skip the provider call and report a zero gradient.
GradReport csd_total(ScoreProvider& provider, std::span<const Image> pyramid, const Conditioning& cond,
                     std::span<const StageSpec> stages, std::uint64_t seed, const DistillSettings& settings);

}  // namespace csdpaint
