#pragma once

#include <string>
#include <vector>

#include "csdpaint/image.hpp"
#include "csdpaint/rng.hpp"

namespace csdpaint {

enum class ScheduleKind { cosine, linear, table };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

// Variance-preserving schedule: z_t = α_t x + σ_t ε with α_t² + σ_t² = 1.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int T = 1000;
  std::vector<double> alpha;  // T + 1 entries, alpha[0] = 1
  std::vector<double> sigma;  // T + 1 entries, sigma[0] = 0
};

// Cosine (squared-cosine ᾱ with offset 0.008, β clipped at 0.999) or linear-β
// (1e-4 … 2e-2) schedule.
NoiseSchedule make_schedule(ScheduleKind kind, int T);
// Wraps externally supplied tables (e.g. from a remote provider handshake).
NoiseSchedule schedule_from_tables(std::vector<double> alpha, std::vector<double> sigma, double tolerance);

// z = α_t·x + σ_t·eps
Image add_noise(const Image& x, int t, const Image& eps, const NoiseSchedule& sched);

enum class WeightKind { constant, sigma_sq };

WeightKind parse_weight_kind(const std::string& name);
std::string to_string(WeightKind kind);

double weight(int t, const NoiseSchedule& sched, WeightKind kind);

enum class AnnealKind { none, linear };

struct TimestepPolicy {
  double t_min = 0.02;  // fractions of T
  double t_max = 0.98;
  AnnealKind anneal = AnnealKind::none;
  int anneal_iterations = 1;  // t_max decays to t_min over this many iterations
};

void validate_policy(const TimestepPolicy& policy);

// Inclusive integer window [lo, hi] of the policy at `iteration`.
std::pair<int, int> timestep_window(const TimestepPolicy& policy, const NoiseSchedule& sched, int iteration);

// Uniform over the active window.
int sample_timestep(Rng& rng, const TimestepPolicy& policy, const NoiseSchedule& sched, int iteration);

}  // namespace csdpaint
