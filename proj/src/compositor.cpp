#include "csdpaint/compositor.hpp"

#include "csdpaint/errors.hpp"

namespace csdpaint {

namespace {

void require_channels(const Map& m, int channels, const char* what) {
  if (m.channels() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     std::to_string(m.channels()));
  }
}

void require_same_resolution(const Map& a, const Map& b, const char* what) {
  if (a.resolution() != b.resolution()) {
    throw ShapeError(std::string(what) + ": resolution mismatch " + to_string(a.resolution()) + " vs " +
                     to_string(b.resolution()));
  }
}

void require_grad(const Image& g, Resolution res, const char* what) {
  if (g.channels() != 3 || g.resolution() != res) throw ShapeError(std::string(what) + ": gradient shape mismatch");
}

// out = L·a + (1 − L)·b per texel; `a`/`b` are per-texel colour lookups.
template <typename A, typename B>
Map blend(const Map& loc, A&& a, B&& b) {
  Map out;
  out.valid = loc.valid;
  out.source = loc.source;
  out.values = Image(3, loc.resolution());
  const auto L = loc.values.plane(0);
  for (int c = 0; c < 3; ++c) {
    auto dst = out.values.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = L[i] * a(c, i) + (1.0 - L[i]) * b(c, i);
  }
  return out;
}

}  // namespace

void validate_colors(const BlendColors& colors) {
  for (int c = 0; c < 3; ++c) {
    if (!(colors.highlight[c] >= 0.0 && colors.highlight[c] <= 1.0) ||
        !(colors.neutral_base[c] >= 0.0 && colors.neutral_base[c] <= 1.0)) {
      throw ConfigError("colors", "color components must lie in [0, 1]");
    }
  }
}

Map mask_texture(const Map& texture, const Map& localization, const Rgb& base) {
  require_channels(texture, 3, "mask_texture");
  require_channels(localization, 1, "mask_texture");
  require_same_resolution(texture, localization, "mask_texture");
  return blend(
      localization, [&](int c, std::size_t i) { return texture.values.plane(c)[i]; },
      [&](int c, std::size_t) { return base[c]; });
}

Map highlight_blend(const Map& localization, const BlendColors& colors) {
  require_channels(localization, 1, "highlight_blend");
  return blend(
      localization, [&](int c, std::size_t) { return colors.highlight[c]; },
      [&](int c, std::size_t) { return colors.neutral_base[c]; });
}

Map background_composite(const Map& localization, const Map& background, const BlendColors& colors) {
  require_channels(localization, 1, "background_composite");
  require_channels(background, 3, "background_composite");
  require_same_resolution(localization, background, "background_composite");
  return blend(
      localization, [&](int c, std::size_t) { return colors.highlight[c]; },
      [&](int c, std::size_t i) { return background.values.plane(c)[i]; });
}

MaskGrads mask_texture_backward(const Map& texture, const Map& localization, const Rgb& base, const Image& out_grad) {
  require_same_resolution(texture, localization, "mask_texture_backward");
  require_grad(out_grad, texture.resolution(), "mask_texture_backward");
  MaskGrads g{Image(3, texture.resolution()), Image(1, texture.resolution())};
  const auto L = localization.values.plane(0);
  auto gl = g.localization.plane(0);
  for (int c = 0; c < 3; ++c) {
    const auto go = out_grad.plane(c);
    const auto T = texture.values.plane(c);
    auto gt = g.texture.plane(c);
    for (std::size_t i = 0; i < go.size(); ++i) {
      gt[i] = L[i] * go[i];
      gl[i] += (T[i] - base[c]) * go[i];
    }
  }
  return g;
}

Image highlight_blend_backward(const BlendColors& colors, const Image& out_grad) {
  Image g(1, out_grad.resolution());
  auto gl = g.plane(0);
  for (int c = 0; c < 3; ++c) {
    const double d = colors.highlight[c] - colors.neutral_base[c];
    const auto go = out_grad.plane(c);
    for (std::size_t i = 0; i < go.size(); ++i) gl[i] += d * go[i];
  }
  return g;
}

CompositeGrads background_composite_backward(const Map& localization, const Map& background,
                                             const BlendColors& colors, const Image& out_grad) {
  require_same_resolution(localization, background, "background_composite_backward");
  require_grad(out_grad, background.resolution(), "background_composite_backward");
  CompositeGrads g{Image(1, background.resolution()), Image(3, background.resolution())};
  const auto L = localization.values.plane(0);
  auto gl = g.localization.plane(0);
  for (int c = 0; c < 3; ++c) {
    const auto go = out_grad.plane(c);
    const auto B = background.values.plane(c);
    auto gb = g.background.plane(c);
    for (std::size_t i = 0; i < go.size(); ++i) {
      gb[i] = (1.0 - L[i]) * go[i];
      gl[i] += (colors.highlight[c] - B[i]) * go[i];
    }
  }
  return g;
}

}  // namespace csdpaint
