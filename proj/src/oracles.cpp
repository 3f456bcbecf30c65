#include "csdpaint/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "csdpaint/errors.hpp"

namespace csdpaint {

namespace {

void check_timestep(int t, const NoiseSchedule& sched, const char* what) {
  if (t < 1 || t > sched.T) {
    throw ProviderError(std::string(what) + ": timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(sched.T) + "]");
  }
}

double squared_distance(const Image& z, double alpha, const Image& mu) {
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - alpha * mu[i];
    acc += d * d;
  }
  return acc;
}

// log ‖z − α μ‖², computed without overflow; −inf for an exact match.
double log_squared_distance(const Image& z, double alpha, const Image& mu) {
  double m = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) m = std::max(m, std::abs(z[i] - alpha * mu[i]));
  if (m == 0.0) return -std::numeric_limits<double>::infinity();
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = (z[i] - alpha * mu[i]) / m;
    acc += d * d;
  }
  return 2.0 * std::log(m) + std::log(acc);
}

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (!std::isfinite(a)) return a;
  return a + std::log1p(std::exp(b - a));
}

// Lexicographic distance used to pick the nearest component when every
// log-weight is non-finite.
using Rank = std::pair<double, double>;

// ε̂ = (z − α·Σ p_k μ_k) / σ
Image posterior_eps(const Image& z, int t, const Posterior& post, const MixtureOracle& oracle, int stage,
                    const NoiseSchedule& sched) {
  Image mean(z.channels(), z.resolution());
  for (std::size_t k = 0; k < post.p.size(); ++k) {
    if (post.p[k] == 0.0) continue;
    const Image& mu = oracle.components[k].targets[stage];
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += post.p[k] * mu[i];
  }
  return single_target_eps(z, t, mean, sched);
}

Posterior normalize_log_weights(const std::vector<double>& logw, const std::vector<Rank>& rank) {
  Posterior post;
  post.p.assign(logw.size(), 0.0);
  double top = -std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t k = 0; k < logw.size(); ++k) {
    if (logw[k] > top) {
      top = logw[k];
      arg = k;
    }
  }
  if (!std::isfinite(top)) {
    post.fallback = true;
    arg = static_cast<std::size_t>(std::min_element(rank.begin(), rank.end()) - rank.begin());
    post.p[arg] = 1.0;
    return post;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < logw.size(); ++k) {
    post.p[k] = std::exp(logw[k] - top);
    total += post.p[k];
  }
  for (double& v : post.p) v /= total;
  return post;
}

void check_input(const Image& z, const MixtureOracle& oracle, int stage, const char* what) {
  for (const auto& c : oracle.components) {
    if (stage < 0 || stage >= static_cast<int>(c.targets.size())) {
      throw ProviderError(std::string(what) + ": oracle has no stage " + std::to_string(stage));
    }
    if (!c.targets[stage].same_shape(z)) {
      throw ShapeError(std::string(what) + ": input is " + std::to_string(z.channels()) + "x" +
                       to_string(z.resolution()) + ", stage " + std::to_string(stage) + " targets are " +
                       std::to_string(c.targets[stage].channels()) + "x" + to_string(c.targets[stage].resolution()));
    }
  }
}

double log_weight(double w) { return std::log(w); }

}  // namespace

Image single_target_eps(const Image& z, int t, const Image& mu, const NoiseSchedule& sched) {
  check_timestep(t, sched, "single_target_eps");
  require_same_shape(z, mu, "single_target_eps");
  const double a = sched.alpha[t];
  const double s = sched.sigma[t];
  Image eps(z.channels(), z.resolution());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (z[i] - a * mu[i]) / s;
  return eps;
}

void MixtureOracle::validate(std::span<const Resolution> stages) const {
  if (components.empty()) throw ConfigError("provider.components", "mixture needs at least one component");
  for (std::size_t k = 0; k < components.size(); ++k) {
    const std::string key = "provider.components." + std::to_string(k);
    const auto& c = components[k];
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw ConfigError(key + ".weight", "weight must be > 0");
    if (c.targets.size() != stages.size()) {
      throw ConfigError(key + ".targets", "expected " + std::to_string(stages.size()) + " targets, got " +
                                              std::to_string(c.targets.size()));
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (c.targets[i].resolution() != stages[i] || c.targets[i].channels() != 3) {
        throw ConfigError(key + ".targets." + std::to_string(i),
                          "target must be 3x" + to_string(stages[i]));
      }
    }
  }
}

Posterior mixture_posterior(const Image& z, int t, const MixtureOracle& oracle, int stage,
                            const NoiseSchedule& sched) {
  check_timestep(t, sched, "mixture_posterior");
  check_input(z, oracle, stage, "mixture_posterior");
  const double a = sched.alpha[t];
  const double var2 = 2.0 * sched.sigma[t] * sched.sigma[t];
  std::vector<double> logw;
  std::vector<Rank> rank;
  for (const auto& c : oracle.components) {
    logw.push_back(log_weight(c.weight) - squared_distance(z, a, c.targets[stage]) / var2);
    rank.emplace_back(log_squared_distance(z, a, c.targets[stage]), 0.0);
  }
  return normalize_log_weights(logw, rank);
}

Image mixture_eps(const Image& z, int t, const MixtureOracle& oracle, int stage, const NoiseSchedule& sched) {
  return posterior_eps(z, t, mixture_posterior(z, t, oracle, stage, sched), oracle, stage, sched);
}

Posterior cascaded_posterior(const Image& z_hi, int t, const Image& z_lo, int s, const MixtureOracle& oracle,
                             int stage, const NoiseSchedule& sched) {
  if (stage < 1) throw ProviderError("cascaded_posterior: stage must be >= 1");
  check_timestep(t, sched, "cascaded_posterior");
  if (s < 0 || s > sched.T) throw ProviderError("cascaded_posterior: timestep s out of range");
  check_input(z_hi, oracle, stage, "cascaded_posterior");
  check_input(z_lo, oracle, stage - 1, "cascaded_posterior");
  const double a_t = sched.alpha[t];
  const double var_t = 2.0 * sched.sigma[t] * sched.sigma[t];
  const double a_s = sched.alpha[s];
  const double var_s = 2.0 * sched.sigma[s] * sched.sigma[s];
  std::vector<double> logw;
  std::vector<Rank> rank;
  for (const auto& c : oracle.components) {
    const double log_hi = log_squared_distance(z_hi, a_t, c.targets[stage]) - std::log(var_t);
    const double log_lo = log_squared_distance(z_lo, a_s, c.targets[stage - 1]);
    // Without conditioning noise the low-resolution match dominates.
    rank.push_back(var_s > 0.0 ? Rank{log_add(log_hi, log_lo - std::log(var_s)), 0.0} : Rank{log_lo, log_hi});
    const double d_lo = squared_distance(z_lo, a_s, c.targets[stage - 1]);
    // A noiseless conditioning image either matches the component or rules it out.
    const double lo_term = var_s > 0.0 ? d_lo / var_s : (d_lo == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    logw.push_back(log_weight(c.weight) - squared_distance(z_hi, a_t, c.targets[stage]) / var_t - lo_term);
  }
  return normalize_log_weights(logw, rank);
}

Image cascaded_eps(const Image& z_hi, int t, const Image& z_lo, int s, const MixtureOracle& oracle, int stage,
                   const NoiseSchedule& sched) {
  return posterior_eps(z_hi, t, cascaded_posterior(z_hi, t, z_lo, s, oracle, stage, sched), oracle, stage, sched);
}

// ---------------------------------------------------------------------------

SingleTargetProvider::SingleTargetProvider(std::vector<Image> targets, NoiseSchedule sched)
    : targets_(std::move(targets)), sched_(std::move(sched)) {
  if (targets_.empty()) throw ConfigError("provider.targets", "at least one target is required");
  std::vector<Resolution> res = stage_resolutions();
  validate_stage_resolutions(res);
}

std::vector<Resolution> SingleTargetProvider::stage_resolutions() const {
  std::vector<Resolution> res;
  for (const auto& t : targets_) res.push_back(t.resolution());
  return res;
}

Image SingleTargetProvider::base_predict(const Image& z, int t, const Conditioning&) {
  return single_target_eps(z, t, targets_.front(), sched_);
}

Image SingleTargetProvider::super_predict(int stage, const Image& z_hi, int t, const Image&, int,
                                          const Conditioning&) {
  if (stage < 1 || stage >= static_cast<int>(targets_.size())) {
    throw ProviderError("single_target: no stage " + std::to_string(stage));
  }
  return single_target_eps(z_hi, t, targets_[stage], sched_);
}

MixtureProvider::MixtureProvider(MixtureOracle oracle, NoiseSchedule sched)
    : oracle_(std::move(oracle)), sched_(std::move(sched)) {
  if (oracle_.components.empty()) throw ConfigError("provider.components", "mixture needs at least one component");
  std::vector<Resolution> res = stage_resolutions();
  validate_stage_resolutions(res);
  oracle_.validate(res);
}

std::vector<Resolution> MixtureProvider::stage_resolutions() const {
  std::vector<Resolution> res;
  for (const auto& t : oracle_.components.front().targets) res.push_back(t.resolution());
  return res;
}

Image MixtureProvider::base_predict(const Image& z, int t, const Conditioning&) {
  return mixture_eps(z, t, oracle_, 0, sched_);
}

Image MixtureProvider::super_predict(int stage, const Image& z_hi, int t, const Image& z_lo, int s,
                                     const Conditioning&) {
  return cascaded_eps(z_hi, t, z_lo, s, oracle_, stage, sched_);
}

PhotometricTeacher::PhotometricTeacher(Mesh mesh, std::vector<Resolution> stages, NoiseSchedule sched,
                                       RasterOptions raster)
    : mesh_(std::move(mesh)), stages_(std::move(stages)), sched_(std::move(sched)), raster_(raster) {
  validate_stage_resolutions(stages_);
}

void PhotometricTeacher::bind(const std::string& prompt, Image texture) {
  if (texture.channels() != 3) throw ShapeError("teacher texture must have 3 channels");
  textures_[prompt] = std::move(texture);
}

Image PhotometricTeacher::target(const Conditioning& cond, int stage) const {
  const auto it = textures_.find(cond.prompt);
  if (it == textures_.end()) throw ProviderError("photometric_teacher: unknown prompt '" + cond.prompt + "'");
  if (!cond.view) throw ProviderError("photometric_teacher: conditioning has no view");
  if (stage < 0 || stage >= static_cast<int>(stages_.size())) {
    throw ProviderError("photometric_teacher: no stage " + std::to_string(stage));
  }
  return rasterize(mesh_, it->second, *cond.view, stages_[stage], cond.background, raster_).image;
}

Image PhotometricTeacher::base_predict(const Image& z, int t, const Conditioning& cond) {
  return single_target_eps(z, t, target(cond, 0), sched_);
}

Image PhotometricTeacher::super_predict(int stage, const Image& z_hi, int t, const Image&, int,
                                        const Conditioning& cond) {
  if (stage < 1) throw ProviderError("photometric_teacher: super_predict needs stage >= 1");
  return single_target_eps(z_hi, t, target(cond, stage), sched_);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> region_labels(const TexelSurfaceMap& tsm, const HalfSpace& region) {
  std::vector<std::uint8_t> labels(tsm.entries.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& e = tsm.entries[i];
    labels[i] = e.valid && region.contains(e.point) ? 1 : 0;
  }
  return labels;
}

namespace {

Rgb style_color(const StyleRecipe& style, const Vec3& p) {
  if (style.kind == StyleRecipe::Kind::solid) return style.color_a;
  const double phase = p.dot(style.axis) * style.frequency;
  return phase - std::floor(phase) < 0.5 ? style.color_a : style.color_b;
}

Map per_texel_map(const TexelSurfaceMap& tsm, int channels, auto&& value) {
  std::vector<double> vals;
  vals.reserve(tsm.valid_count() * channels);
  for (const auto& e : tsm.entries) {
    if (!e.valid) continue;
    for (double v : value(e)) vals.push_back(v);
  }
  return make_map(tsm, channels, vals);
}

// Paints texels in `where` but outside `keep` (and their gutter copies).
void paint(Map& map, const TexelSurfaceMap& tsm, const HalfSpace& where, const HalfSpace& keep, const Rgb& color) {
  const std::size_t n = map.resolution().pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t src = map.source[i];
    if (src < 0) continue;
    const Vec3& p = tsm.entries[src].point;
    if (!where.contains(p) || keep.contains(p)) continue;
    for (int c = 0; c < 3; ++c) map.values.plane(c)[i] = color[c];
  }
}

}  // namespace

TeacherTargets build_teacher_targets(const TexelSurfaceMap& tsm, const TeacherRecipe& recipe,
                                     const BlendColors& colors) {
  TeacherTargets out;
  out.localization = per_texel_map(tsm, 1, [&](const TexelEntry& e) {
    return std::array<double, 1>{recipe.region.contains(e.point) ? 1.0 : 0.0};
  });
  out.style = per_texel_map(tsm, 3, [&](const TexelEntry& e) { return style_color(recipe.style, e.point); });
  out.background = constant_map(tsm, colors.neutral_base);
  out.localization_view = highlight_blend(out.localization, colors);
  out.texture_view = mask_texture(out.style, out.localization, colors.neutral_base);
  if (recipe.distractor) {
    paint(out.background, tsm, *recipe.distractor, recipe.region, recipe.distractor_color);
    paint(out.texture_view, tsm, *recipe.distractor, recipe.region, recipe.distractor_color);
  }
  out.background_view = background_composite(out.localization, out.background, colors);
  return out;
}

Image solid_image(Resolution res, const Rgb& color) {
  Image img(3, res);
  for (int c = 0; c < 3; ++c) std::fill(img.plane(c).begin(), img.plane(c).end(), color[c]);
  return img;
}

Image checkerboard_image(Resolution res, int cells, const Rgb& a, const Rgb& b) {
  if (cells < 1) throw ConfigError("cells", "checkerboard needs at least one cell");
  Image img(3, res);
  for (int y = 0; y < res.height; ++y) {
    for (int x = 0; x < res.width; ++x) {
      const int cy = y * cells / res.height;
      const int cx = x * cells / res.width;
      const Rgb& col = (cx + cy) % 2 == 0 ? a : b;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
    }
  }
  return img;
}

Image blob_image(Resolution res, double cx, double cy, double radius, const Rgb& color, const Rgb& backdrop) {
  Image img(3, res);
  for (int y = 0; y < res.height; ++y) {
    for (int x = 0; x < res.width; ++x) {
      const double u = (x + 0.5) / res.width - cx;
      const double v = (y + 0.5) / res.height - cy;
      const Rgb& col = u * u + v * v <= radius * radius ? color : backdrop;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
    }
  }
  return img;
}

}  // namespace csdpaint
