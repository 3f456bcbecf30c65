// Acceptance suite: one pass/fail line per criterion. Pass criterion ids on
// the command line to run a subset ("acceptance 3 7").

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/distill.hpp"
#include "csdpaint/fields.hpp"
#include "csdpaint/geometry.hpp"
#include "csdpaint/gradcheck.hpp"
#include "csdpaint/oracles.hpp"
#include "csdpaint/pipeline.hpp"

using namespace csdpaint;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CSDPAINT_TEST_DATA;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool verbose() { return std::getenv("CSD_ACCEPT_VERBOSE") != nullptr; }

Image random_image(int c, Resolution r, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(c, r);
  for (double& v : img.data()) v = u(rng);
  return img;
}

// Timestep policy whose window is the single step t.
TimestepPolicy fixed_timestep(int t, int T) {
  TimestepPolicy p;
  p.t_min = static_cast<double>(t) / T;
  p.t_max = (t + 0.5) / T;
  return p;
}

// ᾱ_t of the cosine schedule, evaluated directly from its closed form.
double cosine_alpha_bar(int t, int T) {
  auto f = [&](double s) {
    const double c = std::cos((s / T + 0.008) / 1.008 * std::numbers::pi / 2.0);
    return c * c;
  };
  return f(t) / f(0);
}

// ---------------------------------------------------------------------------

Outcome sds_closed_form() {
  constexpr int T = 1000;
  constexpr int t = 500;
  constexpr int draws = 10000;
  Rng rng = derive_rng(11, {1});
  const Resolution res{16, 16};
  const Image x = random_image(3, res, rng);
  const Image mu = random_image(3, res, rng);
  SingleTargetProvider provider({mu}, make_schedule(ScheduleKind::cosine, T));
  DistillSettings settings;
  settings.policy = fixed_timestep(t, T);
  Image mean(3, res);
  for (int d = 0; d < draws; ++d) {
    const StageGrad g = sds_grad(provider, x, {}, rng, settings);
    if (g.t != t) return {false, fmt("sampled t=%d, expected %d", g.t, t)};
    axpy(1.0 / draws, g.grad, mean);
  }
  const double ab = cosine_alpha_bar(t, T);
  const double ratio = std::sqrt(ab) / std::sqrt(1.0 - ab);
  double worst = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double expected = ratio * (x[i] - mu[i]);
    const double err = std::abs(expected) < 1e-4 ? std::abs(mean[i] - expected)
                                                  : std::abs(mean[i] - expected) / std::abs(expected);
    worst = std::max(worst, err);
  }
  return {worst <= 0.05, fmt("max per-element error %.3g over %d draws (tolerance 0.05)", worst, draws)};
}

Outcome csd_reduces_to_sds() {
  Rng rng = derive_rng(12, {1});
  const Resolution res{16, 16};
  MixtureOracle oracle;
  for (int k = 0; k < 3; ++k) oracle.components.push_back({1.0 + k, {random_image(3, res, rng)}});
  MixtureProvider provider(oracle, make_schedule(ScheduleKind::cosine, 1000));
  const std::vector<StageSpec> stages{{0, res, 1.0}};
  DistillSettings settings;
  int equal = 0;
  constexpr int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    const Image x = random_image(3, res, rng);
    const std::uint64_t seed = 1000 + trial;
    const GradReport csd = csd_total(provider, std::span<const Image>(&x, 1), {}, stages, seed, settings);
    Rng sds_rng = stage_rng(seed, 0);
    const StageGrad sds = sds_grad(provider, x, {}, sds_rng, settings);
    equal += csd.grads[0] == sds.grad && csd.t[0] == sds.t;
  }
  return {equal == trials, fmt("%d/%d seeds bitwise equal", equal, trials)};
}

Outcome image_convergence() {
  const Resolution res{64, 64};
  Rng rng = derive_rng(13, {1});
  const Image mu = random_image(3, res, rng);
  Image x = random_image(3, res, rng);
  SingleTargetProvider provider({mu}, make_schedule(ScheduleKind::cosine, 1000));
  DistillSettings settings;
  settings.weighting = WeightKind::sigma_sq;
  const AdamHyper hyper{0.05, 0.9, 0.999, 1e-8};
  std::vector<double> m(x.size(), 0.0);
  std::vector<double> v(x.size(), 0.0);
  for (int step = 1; step <= 500; ++step) {
    const StageGrad g = sds_grad(provider, x, {}, rng, settings);
    if (!adam_update<double>(x.data(), g.grad.data(), m, v, step, hyper)) return {false, "non-finite gradient"};
  }
  const double dist = max_abs_diff(x, mu);
  return {dist <= 0.05, fmt("||x - mu||_inf = %.4g after 500 Adam steps (tolerance 0.05)", dist)};
}

Outcome lambda_interpolation() {
  const Resolution lo{32, 32};
  const Resolution hi{64, 64};
  // Component 0 pairs a coarse two-tone stage-1 target with a fine checker
  // whose box average is flat gray, so the stages disagree at low frequency.
  MixtureOracle oracle;
  oracle.components.push_back({1.0, {blob_image(lo, 0.5, 0.5, 0.3, {0.9, 0.6, 0.2}, {0.2, 0.3, 0.6}),
                                     checkerboard_image(hi, 32, {0.1, 0.1, 0.1}, {0.9, 0.9, 0.9})}});
  oracle.components.push_back({1.0, {solid_image(lo, {0.9, 0.1, 0.9}), solid_image(hi, {0.1, 0.9, 0.1})}});
  MixtureProvider provider(oracle, make_schedule(ScheduleKind::cosine, 1000));
  const Image& fine = oracle.components[0].targets[1];

  std::vector<double> dists;
  for (double lambda2 : {0.0, 0.25, 0.5, 1.0}) {
    const std::vector<StageSpec> stages{{0, lo, 1.0}, {1, hi, lambda2}};
    Image x(3, hi, 0.5);
    const AdamHyper hyper{0.02, 0.9, 0.999, 1e-8};
    std::vector<double> m(x.size(), 0.0);
    std::vector<double> v(x.size(), 0.0);
    DistillSettings settings;
    for (int step = 1; step <= 600; ++step) {
      const std::vector<Image> pyramid{area_downsample(x, 2), x};
      const GradReport rep = csd_total(provider, pyramid, {}, stages, 500 + step, settings);
      Image g = rep.grads[1];
      axpy(1.0, area_downsample_adjoint(rep.grads[0], 2), g);
      adam_update<double>(x.data(), g.data(), m, v, step, hyper);
    }
    dists.push_back(l2_norm([&] {
                      Image d = x;
                      axpy(-1.0, fine, d);
                      return d;
                    }()) /
                    std::sqrt(static_cast<double>(x.size())));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < dists.size(); ++i) monotone = monotone && dists[i] <= dists[i - 1];
  return {monotone, fmt("RMS distance to fine target for lambda2 = 0, .25, .5, 1: %.4f %.4f %.4f %.4f", dists[0],
                        dists[1], dists[2], dists[3])};
}

Outcome gradient_checks() {
  const auto results = run_gradchecks();
  bool ok = true;
  std::string detail;
  for (const auto& r : results) {
    ok = ok && r.pass;
    detail += fmt("%s %.2g/%.0e  ", r.suite.c_str(), r.max_rel_error, r.tolerance);
  }
  return {ok, detail};
}

Outcome geometry_round_trip() {
  double worst = 0.0;
  std::size_t texels = 0;
  for (const char* name : {"quad.obj", "icosphere.obj", "cube.obj"}) {
    const Mesh mesh = load_mesh(kData / name);
    for (Resolution res : {Resolution{64, 64}, Resolution{128, 96}}) {
      const TexelSurfaceMap tsm = invert_uv(mesh, res);
      for (int r = 0; r < res.height; ++r) {
        for (int c = 0; c < res.width; ++c) {
          const TexelEntry& e = tsm.at(r, c);
          if (!e.valid) continue;
          const Vec2 uv = forward_uv(mesh, static_cast<int>(e.face), e.bary);
          worst = std::max(worst, (uv - texel_center(res, r, c)).cwiseAbs().maxCoeff());
          ++texels;
        }
      }
    }
  }

  // Seam: cube texels of different charts at the same 3D point.
  const Mesh cube = load_mesh(kData / "cube.obj");
  const TexelSurfaceMap tsm = invert_uv(cube, {64, 64});
  Rng rng = derive_rng(16, {1});
  const FieldParamsF field = init_field<float>({39, 32, HeadKind::color, HiddenActivation::relu}, rng, 1.0);
  const Map map = bake_map(field, Encoding::log_linear(), tsm);
  std::map<std::array<double, 3>, std::vector<std::size_t>> by_point;
  for (std::size_t i = 0; i < tsm.entries.size(); ++i) {
    const auto& e = tsm.entries[i];
    if (e.valid) by_point[{e.point.x(), e.point.y(), e.point.z()}].push_back(i);
  }
  std::size_t pairs = 0;
  std::size_t mismatched = 0;
  for (const auto& [point, ids] : by_point) {
    for (std::size_t a = 0; a < ids.size(); ++a) {
      for (std::size_t b = a + 1; b < ids.size(); ++b) {
        if (tsm.entries[ids[a]].face / 2 == tsm.entries[ids[b]].face / 2) continue;
        ++pairs;
        for (int ch = 0; ch < 3; ++ch) mismatched += map.values.plane(ch)[ids[a]] != map.values.plane(ch)[ids[b]];
      }
    }
  }
  const bool ok = worst <= 1e-6 && pairs >= 24 && mismatched == 0;
  return {ok, fmt("max |uv error| %.2g over %zu texels; %zu cross-chart seam pairs, %zu mismatched values", worst,
                  texels, pairs, mismatched)};
}

// Direct enumeration in long double without log-domain tricks.
std::vector<long double> brute_posterior(const std::vector<const Image*>& z, const std::vector<double>& alpha,
                                         const std::vector<double>& sigma, const MixtureOracle& oracle,
                                         const std::vector<int>& stages) {
  std::vector<long double> p;
  long double total = 0.0L;
  for (const auto& c : oracle.components) {
    long double lw = std::log(static_cast<long double>(c.weight));
    for (std::size_t j = 0; j < z.size(); ++j) {
      const Image& mu = c.targets[stages[j]];
      long double d2 = 0.0L;
      for (std::size_t i = 0; i < mu.size(); ++i) {
        const long double d = (*z[j])[i] - static_cast<long double>(alpha[j]) * mu[i];
        d2 += d * d;
      }
      lw -= d2 / (2.0L * sigma[j] * sigma[j]);
    }
    p.push_back(std::exp(lw));
    total += p.back();
  }
  for (auto& v : p) v /= total;
  return p;
}

Outcome oracle_equivalence() {
  const NoiseSchedule sched = make_schedule(ScheduleKind::cosine, 1000);
  Rng rng = derive_rng(17, {1});
  const Resolution lo{2, 2};
  const Resolution hi{4, 4};
  double worst = 0.0;
  int cases = 0;
  std::uniform_real_distribution<double> uw(0.2, 2.0);
  std::uniform_int_distribution<int> ut(300, 1000);
  for (int K = 1; K <= 8; ++K) {
    for (int trial = 0; trial < 25; ++trial) {
      MixtureOracle oracle;
      for (int k = 0; k < K; ++k) {
        oracle.components.push_back({uw(rng), {random_image(3, lo, rng), random_image(3, hi, rng)}});
      }
      const int t = ut(rng);
      const int s = ut(rng) / 2;
      const Image z_lo = add_noise(oracle.components[0].targets[0], s, standard_normal_like(3, lo, rng), sched);
      const Image z_hi = add_noise(oracle.components[0].targets[1], t, standard_normal_like(3, hi, rng), sched);

      const Posterior pm = mixture_posterior(z_hi, t, oracle, 1, sched);
      const auto bm = brute_posterior({&z_hi}, {sched.alpha[t]}, {sched.sigma[t]}, oracle, {1});
      const Posterior pc = cascaded_posterior(z_hi, t, z_lo, s, oracle, 1, sched);
      const auto bc = brute_posterior({&z_hi, &z_lo}, {sched.alpha[t], sched.alpha[s]},
                                      {sched.sigma[t], sched.sigma[s]}, oracle, {1, 0});
      for (int k = 0; k < K; ++k) {
        worst = std::max(worst, static_cast<double>(std::abs(pm.p[k] - bm[k])));
        worst = std::max(worst, static_cast<double>(std::abs(pc.p[k] - bc[k])));
      }
      // ε̂ from the brute-force posterior mean.
      const Image eps = cascaded_eps(z_hi, t, z_lo, s, oracle, 1, sched);
      for (std::size_t i = 0; i < eps.size(); ++i) {
        long double mean = 0.0L;
        for (int k = 0; k < K; ++k) mean += bc[k] * oracle.components[k].targets[1][i];
        const long double expected = (z_hi[i] - sched.alpha[t] * mean) / sched.sigma[t];
        worst = std::max(worst, static_cast<double>(std::abs(eps[i] - expected)));
      }
      ++cases;
    }
  }
  return {worst <= 1e-6, fmt("max |difference| %.3g over %d oracles with K = 1..8 (tolerance 1e-6)", worst, cases)};
}

TrainConfig teacher_config() {
  TrainConfig c;
  c.mesh = kData / "icosphere.obj";
  c.texture = {64, 64};
  c.iterations = 2000;
  c.seed = 3;
  c.stages = {StageSpec{0, {32, 32}, 1.0}, StageSpec{1, {64, 64}, 0.5}};
  c.field.width = 64;
  c.optimizer.lr = 1e-3;
  c.object_class = "sphere";
  c.region = "cap";
  c.style = "striped";
  c.provider.kind = ProviderKind::teacher;
  c.provider.teacher.region = HalfSpace{Vec3(0.0, 1.0, 0.0), 0.0};
  return c;
}

double train_iou(const TrainConfig& cfg, const char* label) {
  Trainer trainer(cfg);
  const auto labels = region_labels(trainer.tsm(), cfg.provider.teacher.region);
  while (trainer.iteration() < cfg.iterations) {
    trainer.step();
    if (verbose() && trainer.iteration() % 200 == 0) {
      std::printf("    [%s] iteration %d IoU %.4f\n", label, trainer.iteration(),
                  texel_iou(trainer.maps().localization, labels));
    }
  }
  return texel_iou(trainer.maps().localization, labels);
}

Outcome teacher_end_to_end() {
  const double iou = train_iou(teacher_config(), "teacher");

  // Ablation: a blue feature outside the region shows up in the texture and
  // background targets. The background loss reaches L through the composite.
  TrainConfig abl = teacher_config();
  abl.provider.teacher.distractor = HalfSpace{Vec3(1.0, 0.0, 0.0), 0.25};
  abl.weights = {1.0, 2.0, 1.0};
  abl.background_routes_to_localization = true;
  abl.background_mode = BackgroundMode::separate_mlp;
  const double with_bg = train_iou(abl, "separate_mlp");
  abl.background_mode = BackgroundMode::off;
  const double without_bg = train_iou(abl, "off");
  const double drop = with_bg - without_bg;
  return {iou >= 0.9 && drop >= 0.05,
          fmt("IoU %.4f after 2000 iterations (>= 0.9); ablation IoU separate_mlp %.4f, off %.4f, drop %.4f (>= 0.05)",
              iou, with_bg, without_bg, drop)};
}

Outcome determinism() {
  TrainConfig cfg = teacher_config();
  cfg.iterations = 30;
  cfg.output.preview_views = 1;
  const fs::path root = fs::temp_directory_path() / "csdpaint_acceptance_determinism";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    Trainer trainer(cfg);
    trainer.run();
    export_artifacts(trainer, root / run);
  }
  std::size_t files = 0;
  std::size_t differing = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    const auto name = entry.path().filename();
    ++files;
    if (read_file_bytes(entry.path()) != read_file_bytes(root / "b" / name)) ++differing;
  }
  fs::remove_all(root);
  return {files > 0 && differing == 0, fmt("%zu artifact files compared, %zu differ", files, differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "sds-closed-form", 10.0, sds_closed_form},
      {2, "csd-reduces-to-sds", 10.0, csd_reduces_to_sds},
      {3, "image-space-convergence", 30.0, image_convergence},
      {4, "lambda-interpolation", 300.0, lambda_interpolation},
      {5, "gradient-checks", 60.0, gradient_checks},
      {6, "geometry-round-trip", 60.0, geometry_round_trip},
      {7, "oracle-equivalence", 60.0, oracle_equivalence},
      {8, "photometric-teacher", 900.0, teacher_end_to_end},
      {9, "determinism", 120.0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::printf("%s  C%d %s: %s [%.1f s, budget %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs, c.budget_s, in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  if (only.empty() || only.contains(10)) {
    std::printf("SKIP  C10 bridge-conformance: secondary component (bridge service) is not part of this build\n");
  }
  return failed == 0 ? 0 : 1;
}
