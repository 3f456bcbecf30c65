#include "csdpaint/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "csdpaint/errors.hpp"

namespace csdpaint {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "linear") return ScheduleKind::linear;
  throw ConfigError("schedule.kind", "unknown schedule kind '" + name + "' (expected cosine or linear)");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::table: return "table";
  }
  return "?";
}

NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  if (T < 1) throw ConfigError("schedule.T", "T must be at least 1");
  std::vector<double> betas(static_cast<std::size_t>(T) + 1, 0.0);
  if (kind == ScheduleKind::cosine) {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + s) / (1.0 + s) * 0.5 * std::numbers::pi);
      return c * c;
    };
    for (int t = 1; t <= T; ++t) betas[t] = std::min(1.0 - f(t) / f(t - 1), 0.999);
  } else if (kind == ScheduleKind::linear) {
    constexpr double b0 = 1e-4;
    constexpr double b1 = 2e-2;
    for (int t = 1; t <= T; ++t) betas[t] = T == 1 ? b1 : b0 + (b1 - b0) * (t - 1) / (T - 1);
  } else {
    throw ConfigError("schedule.kind", "table schedules come from schedule_from_tables");
  }
  NoiseSchedule sched;
  sched.kind = kind;
  sched.T = T;
  sched.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  sched.sigma.assign(static_cast<std::size_t>(T) + 1, 0.0);
  double alpha_bar = 1.0;
  for (int t = 1; t <= T; ++t) {
    alpha_bar *= 1.0 - betas[t];
    sched.alpha[t] = std::sqrt(alpha_bar);
    sched.sigma[t] = std::sqrt(1.0 - alpha_bar);
  }
  return sched;
}

NoiseSchedule schedule_from_tables(std::vector<double> alpha, std::vector<double> sigma, double tolerance) {
  if (alpha.size() < 2 || alpha.size() != sigma.size()) {
    throw ProviderError("schedule tables must have equal length ≥ 2");
  }
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    if (!(std::abs(alpha[t] * alpha[t] + sigma[t] * sigma[t] - 1.0) <= tolerance)) {
      throw ProviderError("schedule tables violate alpha^2 + sigma^2 = 1 at t = " + std::to_string(t));
    }
  }
  NoiseSchedule sched;
  sched.kind = ScheduleKind::table;
  sched.T = static_cast<int>(alpha.size()) - 1;
  sched.alpha = std::move(alpha);
  sched.sigma = std::move(sigma);
  return sched;
}

Image add_noise(const Image& x, int t, const Image& eps, const NoiseSchedule& sched) {
  require_same_shape(x, eps, "add_noise");
  if (t < 0 || t > sched.T) throw ShapeError("add_noise: timestep " + std::to_string(t) + " out of range");
  const double a = sched.alpha[t];
  const double s = sched.sigma[t];
  Image z(x.channels(), x.resolution());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + s * eps[i];
  return z;
}

WeightKind parse_weight_kind(const std::string& name) {
  if (name == "constant") return WeightKind::constant;
  if (name == "sigma_sq") return WeightKind::sigma_sq;
  throw ConfigError("schedule.weighting", "unknown weighting '" + name + "' (expected constant or sigma_sq)");
}

std::string to_string(WeightKind kind) { return kind == WeightKind::constant ? "constant" : "sigma_sq"; }

double weight(int t, const NoiseSchedule& sched, WeightKind kind) {
  if (kind == WeightKind::constant) return 1.0;
  const double s = sched.sigma.at(static_cast<std::size_t>(t));
  return s * s;
}

void validate_policy(const TimestepPolicy& policy) {
  if (!(policy.t_min >= 0.0 && policy.t_min < policy.t_max && policy.t_max <= 1.0)) {
    throw ConfigError("schedule.t_min", "timestep window must satisfy 0 <= t_min < t_max <= 1");
  }
  if (policy.anneal == AnnealKind::linear && policy.anneal_iterations < 1) {
    throw ConfigError("schedule.anneal_iterations", "must be at least 1");
  }
}

std::pair<int, int> timestep_window(const TimestepPolicy& policy, const NoiseSchedule& sched, int iteration) {
  double t_max = policy.t_max;
  if (policy.anneal == AnnealKind::linear) {
    const double frac = std::clamp(static_cast<double>(iteration) / policy.anneal_iterations, 0.0, 1.0);
    t_max = policy.t_max - (policy.t_max - policy.t_min) * frac;
  }
  const int lo = std::clamp(static_cast<int>(std::ceil(policy.t_min * sched.T)), 1, sched.T);
  const int hi = std::clamp(static_cast<int>(std::floor(t_max * sched.T)), lo, sched.T);
  return {lo, hi};
}

int sample_timestep(Rng& rng, const TimestepPolicy& policy, const NoiseSchedule& sched, int iteration) {
  const auto [lo, hi] = timestep_window(policy, sched, iteration);
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(rng);
}

}  // namespace csdpaint
