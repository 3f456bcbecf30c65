#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "csdpaint/fields.hpp"
#include "csdpaint/geometry.hpp"
#include "csdpaint/image.hpp"
#include "csdpaint/rng.hpp"

namespace csdpaint {

// Orbit camera around `look_at`; y is up.
struct Camera {
  double azimuth = 0.0;    // radians
  double elevation = 0.0;  // radians
  double radius = 2.5;
  double fov_y = 0.8;  // radians
  Vec3 look_at = Vec3::Zero();

  Vec3 eye() const;
  friend bool operator==(const Camera&, const Camera&) = default;
};

void validate_camera(const Camera& cam);

struct Range {
  double min = 0.0;
  double max = 0.0;
};

struct CameraPolicy {
  Range azimuth{0.0, 2.0 * std::numbers::pi};
  Range elevation{-0.35, 0.8};
  Range radius{2.2, 2.6};
  double fov_y = 0.8;
  Vec3 look_at = Vec3::Zero();
};

void validate_camera_policy(const CameraPolicy& policy);

// Azimuth, elevation and radius are each uniform on their ranges (drawn in
// that order); collapsed ranges give fixed values.
Camera sample_camera(Rng& rng, const CameraPolicy& policy);

struct RasterOptions {
  double ambient_floor = 0.3;
};

// Per-pixel record of how the colour was produced.
struct PixelSample {
  bool hit = false;
  std::int32_t face = -1;
  std::array<std::int32_t, 4> texel{-1, -1, -1, -1};  // row-major texel indices
  std::array<double, 4> weight{0.0, 0.0, 0.0, 0.0};   // bilinear weights, sum to 1
  double shade = 0.0;
};

struct RenderedView {
  Image image;  // 3 × H × W
  std::vector<PixelSample> samples;
  Rgb background{0.0, 0.0, 0.0};
  Resolution texture_resolution;
  Camera camera;
};

// Perspective z-buffered rasterization with bilinear texture lookup and a
// clamped Lambert headlight. `texture` must be a 3-channel image. Gradients
// later flow only through texel colours.
RenderedView rasterize(const Mesh& mesh, const Image& texture, const Camera& camera, Resolution resolution,
                       const Rgb& background, const RasterOptions& options = {});

// Scatters shade·wᵢ·image_grad of every hit pixel into its footprint texels.
Image backprop_image_grad(const RenderedView& view, const Image& image_grad);

enum class PyramidMode {
  direct,      // each stage rasterized at its own resolution
  downsample,  // highest stage rasterized, lower stages area-downsampled
};

struct ViewPyramid {
  std::vector<RenderedView> views;  // one per stage, increasing resolution
  PyramidMode mode = PyramidMode::direct;

  std::vector<Image> images() const;
};

void validate_stage_resolutions(std::span<const Resolution> resolutions);

ViewPyramid render_pyramid(const Mesh& mesh, const Image& texture, const Camera& camera,
                           std::span<const Resolution> resolutions, const Rgb& background,
                           const RasterOptions& options = {}, PyramidMode mode = PyramidMode::direct);

// Texture gradient of Σ_i ⟨grads[i], xⁱ⟩.
Image backprop_pyramid(const ViewPyramid& pyramid, std::span<const Image> grads);

// Hit mask (1 channel) of a rendered view.
Image hit_mask(const RenderedView& view);

}  // namespace csdpaint
