#include "csdpaint/distill.hpp"

#include <algorithm>
#include <cmath>

#include "csdpaint/errors.hpp"

namespace csdpaint {

namespace {

void check_prediction(const ScoreProvider& provider, const Image& eps_hat, const Image& z, const char* call) {
  if (!eps_hat.same_shape(z)) {
    throw ProviderError("provider '" + provider.name() + "' " + call + " returned shape " +
                        std::to_string(eps_hat.channels()) + "x" + to_string(eps_hat.resolution()) + ", expected " +
                        std::to_string(z.channels()) + "x" + to_string(z.resolution()));
  }
  if (!all_finite(eps_hat)) {
    throw ProviderError("provider '" + provider.name() + "' " + call + " returned non-finite values");
  }
}

Image residual(const Image& eps_hat, const Image& eps, double w) {
  Image g(eps.channels(), eps.resolution());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * (eps_hat[i] - eps[i]);
  return g;
}

TimestepPolicy conditioning_policy(const DistillSettings& settings) {
  TimestepPolicy p = settings.policy;
  p.anneal = AnnealKind::none;
  p.t_max = std::min(p.t_max, settings.s_max);
  if (!(p.t_min < p.t_max)) throw ConfigError("schedule.s_max", "s_max must exceed t_min");
  return p;
}

}  // namespace

void validate_stages(std::span<const StageSpec> stages) {
  if (stages.empty()) throw ConfigError("stages", "at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].index != static_cast<int>(i)) {
      throw ConfigError("stages." + std::to_string(i), "stage indices must be 0, 1, 2, ...");
    }
    if (!(stages[i].lambda >= 0.0) || !std::isfinite(stages[i].lambda)) {
      throw ConfigError("stages." + std::to_string(i) + ".lambda", "lambda must be finite and >= 0");
    }
  }
  std::vector<Resolution> res;
  for (const auto& s : stages) res.push_back(s.resolution);
  validate_stage_resolutions(res);
}

StageGrad sds_grad(ScoreProvider& provider, const Image& x, const Conditioning& cond, Rng& rng,
                   const DistillSettings& settings) {
  StageGrad out;
  out.t = sample_timestep(rng, settings.policy, settings.schedule, settings.iteration);
  const Image eps = standard_normal_like(x.channels(), x.resolution(), rng);
  const Image z = add_noise(x, out.t, eps, settings.schedule);
  const Image eps_hat = provider.base_predict(z, out.t, cond);
  check_prediction(provider, eps_hat, z, "base_predict");
  out.grad = residual(eps_hat, eps, weight(out.t, settings.schedule, settings.weighting));
  return out;
}

StageGrad csd_stage_grad(ScoreProvider& provider, int stage, const Image& x_hi, const Image& x_lo,
                         const Conditioning& cond, Rng& rng, const DistillSettings& settings) {
  if (stage < 1) throw ConfigError("stages", "csd_stage_grad needs a super-resolution stage (index >= 1)");
  StageGrad out;
  out.t = sample_timestep(rng, settings.policy, settings.schedule, settings.iteration);
  out.s = sample_timestep(rng, conditioning_policy(settings), settings.schedule, settings.iteration);
  const Image eps_hi = standard_normal_like(x_hi.channels(), x_hi.resolution(), rng);
  const Image eps_lo = standard_normal_like(x_lo.channels(), x_lo.resolution(), rng);
  const Image z_hi = add_noise(x_hi, out.t, eps_hi, settings.schedule);
  const Image z_lo = add_noise(x_lo, out.s, eps_lo, settings.schedule);
  const Image eps_hat = provider.super_predict(stage, z_hi, out.t, z_lo, out.s, cond);
  check_prediction(provider, eps_hat, z_hi, "super_predict");
  out.grad = residual(eps_hat, eps_hi, weight(out.t, settings.schedule, settings.weighting));
  return out;
}

Rng stage_rng(std::uint64_t seed, int stage) { return derive_rng(seed, {0x637364u, static_cast<std::uint64_t>(stage)}); }

GradReport csd_total(ScoreProvider& provider, std::span<const Image> pyramid, const Conditioning& cond,
                     std::span<const StageSpec> stages, std::uint64_t seed, const DistillSettings& settings) {
  if (stages.empty()) throw ConfigError("stages", "at least one stage is required");
  if (pyramid.size() != stages.size()) {
    throw ShapeError("csd_total: pyramid has " + std::to_string(pyramid.size()) + " images for " +
                     std::to_string(stages.size()) + " stages");
  }
  GradReport report;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (pyramid[i].resolution() != stages[i].resolution) {
      throw ShapeError("csd_total: stage " + std::to_string(i) + " image is " + to_string(pyramid[i].resolution()) +
                       ", expected " + to_string(stages[i].resolution));
    }
    StageGrad sg;
    if (stages[i].lambda == 0.0) {
      sg.grad = Image(pyramid[i].channels(), pyramid[i].resolution());
    } else {
      Rng rng = stage_rng(seed, static_cast<int>(i));
      sg = i == 0 ? sds_grad(provider, pyramid[0], cond, rng, settings)
                  : csd_stage_grad(provider, static_cast<int>(i), pyramid[i], pyramid[i - 1], cond, rng, settings);
      if (stages[i].lambda != 1.0) {
        for (double& v : sg.grad.data()) v *= stages[i].lambda;
      }
    }
    report.norms.push_back(l2_norm(sg.grad));
    report.t.push_back(sg.t);
    report.s.push_back(sg.s);
    report.grads.push_back(std::move(sg.grad));
  }
  return report;
}

}  // namespace csdpaint
