#pragma once

#include "csdpaint/fields.hpp"
#include "csdpaint/image.hpp"

namespace csdpaint {

struct BlendColors {
  Rgb highlight{1.0, 1.0, 0.0};     // "yellow"
  Rgb neutral_base{0.5, 0.5, 0.5};  // unstyled surface
};

void validate_colors(const BlendColors& colors);

// T' = L·T + (1 − L)·base
Map mask_texture(const Map& texture, const Map& localization, const Rgb& base);
// L·highlight + (1 − L)·neutral_base
Map highlight_blend(const Map& localization, const BlendColors& colors);
// B' = L·highlight + (1 − L)·B
Map background_composite(const Map& localization, const Map& background, const BlendColors& colors);

// Vector-Jacobian products. `out_grad` is a 3-channel gradient on the blend
// output; results are gradients on each input map.
struct MaskGrads {
  Image texture;       // 3 channels
  Image localization;  // 1 channel
};
MaskGrads mask_texture_backward(const Map& texture, const Map& localization, const Rgb& base, const Image& out_grad);

Image highlight_blend_backward(const BlendColors& colors, const Image& out_grad);

struct CompositeGrads {
  Image localization;  // 1 channel
  Image background;    // 3 channels
};
CompositeGrads background_composite_backward(const Map& localization, const Map& background,
                                             const BlendColors& colors, const Image& out_grad);

}  // namespace csdpaint
