#include "csdpaint/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "csdpaint/compositor.hpp"
#include "csdpaint/fields.hpp"
#include "csdpaint/geometry.hpp"
#include "csdpaint/render.hpp"
#include "csdpaint/rng.hpp"

namespace csdpaint {

double gradcheck_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < 1e-8 ? diff : diff / scale;
}

namespace {

constexpr std::uint64_t kGradcheckStream = 0x6763;  // "gc"

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

struct Tracker {
  GradcheckResult result;
  double sign = 1.0;

  void compare(double analytic, double numeric) {
    result.max_rel_error = std::max(result.max_rel_error, gradcheck_error(sign * analytic, numeric));
    ++result.checked;
  }
};

Tracker start(const std::string& suite, double tolerance, const GradcheckOptions& options) {
  Tracker t;
  t.result.suite = suite;
  t.result.tolerance = tolerance;
  t.sign = options.flip_suite == suite ? -1.0 : 1.0;
  return t;
}

GradcheckResult finish(Tracker t) {
  t.result.pass = t.result.checked > 0 && t.result.max_rel_error <= t.result.tolerance;
  return t.result;
}

Mesh square_mesh(bool full) {
  Mesh m;
  m.vertices = {Vec3(-0.5, -0.5, 0.0), Vec3(0.5, -0.5, 0.0), Vec3(0.5, 0.5, 0.0), Vec3(-0.5, 0.5, 0.0)};
  m.uvs = {Vec2(0.0, 0.0), Vec2(1.0, 0.0), Vec2(1.0, 1.0), Vec2(0.0, 1.0)};
  m.faces = {{0, 1, 2}};
  if (full) m.faces.push_back({0, 2, 3});
  m.face_uvs = m.faces;
  finalize_mesh(m);
  return m;
}

GradcheckResult mlp_suite(const std::string& name, HeadKind head, HiddenActivation hidden,
                          const GradcheckOptions& options) {
  Tracker tr = start(name, 1e-6, options);
  Rng rng = derive_rng(options.seed, {kGradcheckStream, static_cast<std::uint64_t>(head),
                                      static_cast<std::uint64_t>(hidden)});
  const FieldShape shape{39, 16, head, hidden};
  FieldParamsD params = init_field<double>(shape, rng, 1.0);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (auto& layer : params.layers) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = normal(rng);
  }
  const int batch = 5;
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> inputs(static_cast<std::size_t>(batch) * shape.input_dim);
  for (double& v : inputs) v = uni(rng);
  std::vector<double> out_grad(static_cast<std::size_t>(batch) * head_channels(head));
  for (double& v : out_grad) v = uni(rng);

  FieldTrace<double> trace;
  field_forward<double>(params, inputs, batch, &trace);
  const FieldGrads<double> grads = field_backward<double>(params, trace, out_grad);

  auto loss = [&](const FieldParamsD& p) { return dot(field_forward<double>(p, inputs, batch), out_grad); };
  constexpr double h = 1e-5;
  FieldParamsD probe = params;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& w = probe.layers[l].weight;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + h;
      const double up = loss(probe);
      w.data()[i] = orig - h;
      const double down = loss(probe);
      w.data()[i] = orig;
      tr.compare(grads.layers[l].weight.data()[i], (up - down) / (2.0 * h));
    }
    auto& b = probe.layers[l].bias;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double orig = b(i);
      b(i) = orig + h;
      const double up = loss(probe);
      b(i) = orig - h;
      const double down = loss(probe);
      b(i) = orig;
      tr.compare(grads.layers[l].bias(i), (up - down) / (2.0 * h));
    }
  }
  return finish(tr);
}

GradcheckResult render_suite(const GradcheckOptions& options) {
  Tracker tr = start("render.texture", 1e-3, options);
  Rng rng = derive_rng(options.seed, {kGradcheckStream, 10});
  const Mesh mesh = square_mesh(true);
  const Resolution tex_res{16, 16};
  const Resolution img_res{32, 32};
  Camera cam;
  cam.azimuth = 0.35;
  cam.elevation = 0.2;
  cam.radius = 1.6;
  const Rgb backdrop{0.3, 0.3, 0.3};
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Image texture(3, tex_res);
  for (double& v : texture.data()) v = uni(rng);
  Image img_grad(3, img_res);
  for (double& v : img_grad.data()) v = 2.0 * uni(rng) - 1.0;

  const RenderedView view = rasterize(mesh, texture, cam, img_res, backdrop);
  const Image analytic = backprop_image_grad(view, img_grad);
  auto loss = [&](const Image& tex) { return dot(rasterize(mesh, tex, cam, img_res, backdrop).image.data(), img_grad.data()); };

  std::vector<std::size_t> covered;
  for (std::size_t i = 0; i < tex_res.pixels(); ++i) {
    if (analytic.plane(0)[i] != 0.0) covered.push_back(i);
  }
  std::shuffle(covered.begin(), covered.end(), rng);
  covered.resize(std::min<std::size_t>(covered.size(), 20));
  constexpr double h = 1e-3;
  Image probe = texture;
  for (std::size_t texel : covered) {
    for (int c = 0; c < 3; ++c) {
      double& v = probe.plane(c)[texel];
      const double orig = v;
      v = orig + h;
      const double up = loss(probe);
      v = orig - h;
      const double down = loss(probe);
      v = orig;
      tr.compare(analytic.plane(c)[texel], (up - down) / (2.0 * h));
    }
  }
  return finish(tr);
}

Map random_map(const TexelSurfaceMap& tsm, int channels, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> vals(tsm.valid_count() * channels);
  for (double& v : vals) v = uni(rng);
  return make_map(tsm, channels, vals);
}

// Perturbs every entry of `target` and compares against `analytic`.
void check_image(Tracker& tr, Image& target, const Image& analytic, const std::function<double()>& loss) {
  constexpr double h = 1e-6;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double orig = target[i];
    target[i] = orig + h;
    const double up = loss();
    target[i] = orig - h;
    const double down = loss();
    target[i] = orig;
    tr.compare(analytic[i], (up - down) / (2.0 * h));
  }
}

GradcheckResult compositor_suite(const GradcheckOptions& options) {
  Tracker tr = start("compositor", 1e-6, options);
  Rng rng = derive_rng(options.seed, {kGradcheckStream, 20});
  const TexelSurfaceMap tsm = invert_uv(square_mesh(false), {6, 6});
  const BlendColors colors{{1.0, 0.9, 0.1}, {0.45, 0.5, 0.55}};
  Map tex = random_map(tsm, 3, rng);
  Map loc = random_map(tsm, 1, rng);
  Map bg = random_map(tsm, 3, rng);
  Image g(3, tsm.resolution);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (double& v : g.data()) v = uni(rng);
  auto score = [&](const Map& m) { return dot(m.values.data(), g.data()); };

  const MaskGrads mg = mask_texture_backward(tex, loc, colors.neutral_base, g);
  check_image(tr, tex.values, mg.texture, [&] { return score(mask_texture(tex, loc, colors.neutral_base)); });
  check_image(tr, loc.values, mg.localization, [&] { return score(mask_texture(tex, loc, colors.neutral_base)); });
  check_image(tr, loc.values, highlight_blend_backward(colors, g),
              [&] { return score(highlight_blend(loc, colors)); });
  const CompositeGrads cg = background_composite_backward(loc, bg, colors, g);
  check_image(tr, loc.values, cg.localization, [&] { return score(background_composite(loc, bg, colors)); });
  check_image(tr, bg.values, cg.background, [&] { return score(background_composite(loc, bg, colors)); });
  return finish(tr);
}

GradcheckResult gutter_suite(const GradcheckOptions& options) {
  Tracker tr = start("map.gutter", 1e-6, options);
  Rng rng = derive_rng(options.seed, {kGradcheckStream, 30});
  const TexelSurfaceMap tsm = invert_uv(square_mesh(false), {8, 8});
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> vals(tsm.valid_count() * 3);
  for (double& v : vals) v = uni(rng);
  Image g(3, tsm.resolution);
  for (double& v : g.data()) v = uni(rng);
  const Map map = make_map(tsm, 3, vals);
  const std::vector<double> analytic = fold_map_grad(map, g);
  constexpr double h = 1e-6;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = dot(make_map(tsm, 3, vals).values.data(), g.data());
    vals[i] = orig - h;
    const double down = dot(make_map(tsm, 3, vals).values.data(), g.data());
    vals[i] = orig;
    tr.compare(analytic[i], (up - down) / (2.0 * h));
  }
  return finish(tr);
}

}  // namespace

std::vector<GradcheckResult> run_gradchecks(const GradcheckOptions& options) {
  return {
      mlp_suite("mlp.relu.color", HeadKind::color, HiddenActivation::relu, options),
      mlp_suite("mlp.tanh.probability", HeadKind::probability, HiddenActivation::tanh, options),
      render_suite(options),
      compositor_suite(options),
      gutter_suite(options),
  };
}

}  // namespace csdpaint
