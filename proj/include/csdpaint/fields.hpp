#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "csdpaint/geometry.hpp"
#include "csdpaint/image.hpp"
#include "csdpaint/rng.hpp"

namespace csdpaint {

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

enum class EncodingKind { log_linear, gaussian };

// Sinusoidal features of a 3D point. Log-linear bands use frequencies
// π·2^k on each axis; Gaussian bands use 3 random projections per band.
// Layout: optional raw [x y z], then per band [sin×3, cos×3].
struct Encoding {
  EncodingKind kind = EncodingKind::log_linear;
  int num_bands = 6;
  std::vector<double> frequencies;  // log-linear only, strictly increasing
  Eigen::Matrix<double, Eigen::Dynamic, 3> projections;  // gaussian only, (3·bands)×3
  bool include_input = true;

  static Encoding log_linear(int bands = 6, bool include_input = true);
  static Encoding gaussian(int bands, double scale, std::uint64_t seed, bool include_input = true);

  int output_dim() const { return (include_input ? 3 : 0) + 6 * num_bands; }
  void encode(const Vec3& point, std::span<double> out) const;
  std::vector<double> encode(const Vec3& point) const;
};

// Encodes a list of points into a sample-major batch (points × output_dim).
template <typename Scalar>
std::vector<Scalar> encode_batch(const Encoding& enc, std::span<const Vec3> points);

// ---------------------------------------------------------------------------
// Coordinate MLP
// ---------------------------------------------------------------------------

enum class HeadKind { probability, color };
enum class HiddenActivation { relu, tanh };

inline int head_channels(HeadKind head) { return head == HeadKind::probability ? 1 : 3; }

inline constexpr int kFieldDepth = 6;

struct FieldShape {
  int input_dim = 39;
  int width = 256;
  HeadKind head = HeadKind::color;
  HiddenActivation hidden = HiddenActivation::relu;
};

template <typename Scalar>
struct Layer {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weight;  // out × in, column-major
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bias;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

template <typename Scalar>
struct FieldParams {
  std::vector<Layer<Scalar>> layers;
  HeadKind head = HeadKind::color;
  HiddenActivation hidden = HiddenActivation::relu;

  int input_dim() const { return layers.front().in_dim(); }
  int output_dim() const { return layers.back().out_dim(); }
  std::size_t parameter_count() const;
  bool all_finite() const;
  friend bool operator==(const FieldParams& a, const FieldParams& b) {
    if (a.head != b.head || a.hidden != b.hidden || a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias) return false;
    }
    return true;
  }
};

// Gradients share the parameter layout.
template <typename Scalar>
using FieldGrads = FieldParams<Scalar>;

using FieldParamsF = FieldParams<float>;
using FieldParamsD = FieldParams<double>;

// Uniform fan-in (He) initialization for hidden layers, zero biases, last
// layer scaled by `head_scale` so every head starts near 0.5.
template <typename Scalar>
FieldParams<Scalar> init_field(const FieldShape& shape, Rng& rng, double head_scale = 1e-2);

template <typename Scalar>
FieldParams<Scalar> zeros_like(const FieldParams<Scalar>& params);

template <typename Scalar>
FieldParams<Scalar> cast_field(const FieldParams<double>& params);

template <typename Scalar>
FieldParams<double> to_double(const FieldParams<Scalar>& params);

// Activations retained by a forward pass. acts[0] is the input batch and
// acts[l + 1] the post-activation output of layer l, all sample-major.
template <typename Scalar>
struct FieldTrace {
  int batch = 0;
  std::vector<std::vector<Scalar>> acts;
};

// Evaluates the MLP on `batch` samples laid out sample-major in `inputs`.
// Each sample is computed with the same operation sequence regardless of
// batch size or position, so results are bitwise batch-independent.
// Throws DivergenceError naming the layer when an activation is not finite.
template <typename Scalar>
std::vector<Scalar> field_forward(const FieldParams<Scalar>& params, std::span<const Scalar> inputs, int batch,
                                  FieldTrace<Scalar>* trace = nullptr);

// Reverse-mode gradients of Σ output_grads · outputs with respect to every
// parameter.
template <typename Scalar>
FieldGrads<Scalar> field_backward(const FieldParams<Scalar>& params, const FieldTrace<Scalar>& trace,
                                  std::span<const Scalar> output_grads);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam on flat buffers. `step` is the step count after this
// update (≥ 1). Returns false and leaves everything untouched when any
// gradient is non-finite.
template <typename Scalar>
bool adam_update(std::span<Scalar> params, std::span<const Scalar> grads, std::span<Scalar> m, std::span<Scalar> v,
                 std::int64_t step, const AdamHyper& hyper);

template <typename Scalar>
struct AdamState {
  FieldParams<Scalar> m;
  FieldParams<Scalar> v;
  std::int64_t step = 0;
  AdamHyper hyper;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const FieldParams<Scalar>& params, const AdamHyper& hyper);

// One Adam step on every layer. Returns false (nothing changes, step not
// incremented) if a gradient is non-finite.
template <typename Scalar>
bool adam_step(FieldParams<Scalar>& params, const FieldGrads<Scalar>& grads, AdamState<Scalar>& state);

// ---------------------------------------------------------------------------
// Maps
// ---------------------------------------------------------------------------

inline constexpr int kGutterRings = 4;

// A baked 2D texture-space map. Invalid texels within kGutterRings of a
// valid texel hold a copy of the nearest valid texel (`source`); others are
// zero with source −1.
struct Map {
  Image values;                      // C × H × W
  std::vector<std::uint8_t> valid;   // H·W
  std::vector<std::int32_t> source;  // H·W, valid texel each texel copies

  Resolution resolution() const { return values.resolution(); }
  int channels() const { return values.channels(); }
};

// Nearest-valid-texel dilation sources for a validity mask.
std::vector<std::int32_t> gutter_sources(const std::vector<std::uint8_t>& valid, Resolution res,
                                         int rings = kGutterRings);

// Builds a map from per-valid-texel values (row-major over valid texels).
Map make_map(const TexelSurfaceMap& tsm, int channels, std::span<const double> valid_values);
Map constant_map(const TexelSurfaceMap& tsm, std::span<const double> value);

// Sums gutter-texel gradients back into their source texels; returns one
// C-vector per valid texel, row-major over valid texels.
std::vector<double> fold_map_grad(const Map& map, const Image& grad);

template <typename Scalar>
struct BakeResult {
  Map map;
  FieldTrace<Scalar> trace;
};

// Evaluates the field at every valid texel's surface point and fills the
// gutter.
template <typename Scalar>
BakeResult<Scalar> bake_map_traced(const FieldParams<Scalar>& params, const Encoding& enc, const TexelSurfaceMap& tsm);

template <typename Scalar>
Map bake_map(const FieldParams<Scalar>& params, const Encoding& enc, const TexelSurfaceMap& tsm) {
  return bake_map_traced(params, enc, tsm).map;
}

// Parameter gradients given a gradient on the baked map values.
template <typename Scalar>
FieldGrads<Scalar> bake_backward(const FieldParams<Scalar>& params, const BakeResult<Scalar>& bake,
                                 const Image& map_grad);

// ---------------------------------------------------------------------------
// Checkpoints: "NF01", layer count, per-layer (in, out) dims as u32 LE, then
// per layer row-major f32 LE weights followed by biases.
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const FieldParamsF& params);
FieldParamsF deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                    HiddenActivation hidden = HiddenActivation::relu);
void write_checkpoint(const FieldParamsF& params, const std::filesystem::path& path);
FieldParamsF read_checkpoint(const std::filesystem::path& path, HiddenActivation hidden = HiddenActivation::relu);

}  // namespace csdpaint
