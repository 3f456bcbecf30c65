#include <cmath>
#include <vector>

#include "csdpaint/distill.hpp"
#include "csdpaint/errors.hpp"
#include "csdpaint/oracles.hpp"
#include "doctest.h"

using namespace csdpaint;

namespace {

// Returns the exact noise the caller is about to draw, by replaying a copy of
// its random stream (t, then s for super stages, then the noise images).
class PeekingProvider final : public ScoreProvider {
 public:
  PeekingProvider(Rng stream, const DistillSettings& settings, std::vector<Resolution> stages)
      : stream_(stream), settings_(settings), stages_(std::move(stages)) {}

  std::string name() const override { return "peeking"; }
  std::vector<Resolution> stage_resolutions() const override { return stages_; }
  Image base_predict(const Image& z, int, const Conditioning&) override {
    sample_timestep(stream_, settings_.policy, settings_.schedule, settings_.iteration);
    return standard_normal_like(z.channels(), z.resolution(), stream_);
  }
  Image super_predict(int, const Image& z_hi, int, const Image&, int, const Conditioning&) override {
    sample_timestep(stream_, settings_.policy, settings_.schedule, settings_.iteration);
    TimestepPolicy sp = settings_.policy;
    sp.t_max = std::min(settings_.s_max, sp.t_max);
    sample_timestep(stream_, sp, settings_.schedule, settings_.iteration);
    return standard_normal_like(z_hi.channels(), z_hi.resolution(), stream_);
  }

 private:
  Rng stream_;
  DistillSettings settings_;
  std::vector<Resolution> stages_;
};

// Wrong-shaped or non-finite output.
class BrokenProvider final : public ScoreProvider {
 public:
  explicit BrokenProvider(bool nan) : nan_(nan) {}
  std::string name() const override { return "broken"; }
  std::vector<Resolution> stage_resolutions() const override { return {{8, 8}}; }
  Image base_predict(const Image& z, int, const Conditioning&) override {
    if (!nan_) return Image(3, {4, 4});
    Image out(z.channels(), z.resolution());
    out[0] = std::nan("");
    return out;
  }
  Image super_predict(int, const Image& z_hi, int t, const Image&, int, const Conditioning& c) override {
    return base_predict(z_hi, t, c);
  }

 private:
  bool nan_;
};

Image random_image(Resolution r, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(3, r);
  for (double& v : img.data()) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("sds gradient vanishes when the provider predicts the drawn noise") {
  Rng rng(1);
  const Image x = random_image({8, 8}, rng);
  DistillSettings settings;
  Rng stream(42);
  PeekingProvider provider(stream, settings, {{8, 8}});
  const StageGrad g = sds_grad(provider, x, {}, stream, settings);
  for (double v : g.grad.data()) CHECK(v == 0.0);
}

TEST_CASE("csd stage gradient vanishes when the provider predicts the drawn noise") {
  Rng rng(2);
  const Image hi = random_image({8, 8}, rng);
  const Image lo = area_downsample(hi, 2);
  DistillSettings settings;
  Rng stream(43);
  PeekingProvider provider(stream, settings, {{4, 4}, {8, 8}});
  const StageGrad g = csd_stage_grad(provider, 1, hi, lo, {}, stream, settings);
  CHECK(g.grad.same_shape(hi));
  for (double v : g.grad.data()) CHECK(v == 0.0);
  CHECK(g.s <= settings.s_max * settings.schedule.T);
}

TEST_CASE("sds Monte-Carlo mean at the target is zero within three standard errors") {
  Rng rng(3);
  const Image mu = random_image({4, 4}, rng);
  SingleTargetProvider provider({mu}, make_schedule(ScheduleKind::cosine, 1000));
  DistillSettings settings;
  settings.weighting = WeightKind::sigma_sq;
  const int draws = 10000;
  Image sum(3, {4, 4});
  Image sum_sq(3, {4, 4});
  for (int d = 0; d < draws; ++d) {
    const StageGrad g = sds_grad(provider, mu, {}, rng, settings);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += g.grad[i];
      sum_sq[i] += g.grad[i] * g.grad[i];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / draws;
    const double var = sum_sq[i] / draws - mean * mean;
    CHECK(std::abs(mean) <= 3.0 * std::sqrt(var / draws) + 1e-12);
  }
}

TEST_CASE("sds mean at fixed t matches the closed form for an offset image") {
  Rng rng(4);
  const Image mu = random_image({4, 4}, rng);
  Image x = mu;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.1 * std::sin(static_cast<double>(i) + 1.0);
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 1000);
  SingleTargetProvider provider({mu}, sched);
  DistillSettings settings;
  settings.policy.t_min = 0.3;
  settings.policy.t_max = 0.3005;
  const int t = 300;
  const int draws = 10000;
  Image mean(3, {4, 4});
  for (int d = 0; d < draws; ++d) axpy(1.0 / draws, sds_grad(provider, x, {}, rng, settings).grad, mean);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double expected = sched.alpha[t] / sched.sigma[t] * (x[i] - mu[i]);
    CHECK(std::abs(mean[i] - expected) <= 0.05 * std::abs(expected));
  }
}

TEST_CASE("cascaded single-target gradient at the target has zero mean") {
  Rng rng(5);
  MixtureOracle oracle;
  const Image hi = random_image({8, 8}, rng);
  oracle.components.push_back({1.0, {area_downsample(hi, 2), hi}});
  MixtureProvider provider(oracle, make_schedule(ScheduleKind::cosine, 1000));
  DistillSettings settings;
  settings.weighting = WeightKind::sigma_sq;
  const int draws = 5000;
  Image sum(3, {8, 8});
  Image sum_sq(3, {8, 8});
  for (int d = 0; d < draws; ++d) {
    const StageGrad g = csd_stage_grad(provider, 1, hi, oracle.components[0].targets[0], {}, rng, settings);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += g.grad[i];
      sum_sq[i] += g.grad[i] * g.grad[i];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double mean = sum[i] / draws;
    const double var = sum_sq[i] / draws - mean * mean;
    CHECK(std::abs(mean) <= 3.0 * std::sqrt(var / draws) + 1e-12);
  }
}

TEST_CASE("csd_total reduces to sds, scales linearly in lambda, and zeroes with lambda 0") {
  Rng rng(6);
  MixtureOracle oracle;
  oracle.components.push_back({1.0, {random_image({4, 4}, rng), random_image({8, 8}, rng)}});
  oracle.components.push_back({2.0, {random_image({4, 4}, rng), random_image({8, 8}, rng)}});
  MixtureProvider provider(oracle, make_schedule(ScheduleKind::cosine, 1000));
  DistillSettings settings;
  const Image hi = random_image({8, 8}, rng);
  const std::vector<Image> pyramid{area_downsample(hi, 2), hi};

  const std::vector<StageSpec> single{{0, {4, 4}, 1.0}};
  const GradReport one = csd_total(provider, std::span(pyramid).first(1), {}, single, 77, settings);
  Rng s = stage_rng(77, 0);
  CHECK(one.grads[0] == sds_grad(provider, pyramid[0], {}, s, settings).grad);

  const std::vector<StageSpec> base{{0, {4, 4}, 0.5}, {1, {8, 8}, 0.75}};
  const std::vector<StageSpec> doubled{{0, {4, 4}, 1.0}, {1, {8, 8}, 1.5}};
  const GradReport a = csd_total(provider, pyramid, {}, base, 5, settings);
  const GradReport b = csd_total(provider, pyramid, {}, doubled, 5, settings);
  for (int k = 0; k < 2; ++k) CHECK(scaled(a.grads[k], 2.0) == b.grads[k]);

  const std::vector<StageSpec> zero{{0, {4, 4}, 0.0}, {1, {8, 8}, 0.0}};
  const GradReport z = csd_total(provider, pyramid, {}, zero, 5, settings);
  for (const auto& g : z.grads) {
    for (double v : g.data()) CHECK(v == 0.0);
  }
  for (double n : z.norms) CHECK(n == 0.0);
}

TEST_CASE("csd_total rejects empty stage lists and mismatched pyramids") {
  SingleTargetProvider provider({Image(3, {4, 4})}, make_schedule(ScheduleKind::cosine, 100));
  const std::vector<Image> pyramid{Image(3, {4, 4})};
  CHECK_THROWS_AS(csd_total(provider, pyramid, {}, std::span<const StageSpec>(), 1, {}), ConfigError);
  const std::vector<StageSpec> wrong{{0, {8, 8}, 1.0}};
  CHECK_THROWS_AS(csd_total(provider, pyramid, {}, wrong, 1, {}), ShapeError);
}

TEST_CASE("provider contract violations raise provider errors naming it") {
  Rng rng(7);
  const Image x = random_image({8, 8}, rng);
  BrokenProvider shape(false);
  CHECK_THROWS_WITH_AS(sds_grad(shape, x, {}, rng, {}), doctest::Contains("broken"), ProviderError);
  BrokenProvider nan(true);
  CHECK_THROWS_WITH_AS(sds_grad(nan, x, {}, rng, {}), doctest::Contains("non-finite"), ProviderError);
}
