#include "csdpaint/fields.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/errors.hpp"
#include "csdpaint/parallel.hpp"

namespace csdpaint {

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

Encoding Encoding::log_linear(int bands, bool include_input) {
  Encoding enc;
  enc.kind = EncodingKind::log_linear;
  enc.num_bands = bands;
  enc.include_input = include_input;
  for (int k = 0; k < bands; ++k) enc.frequencies.push_back(std::numbers::pi * std::ldexp(1.0, k));
  return enc;
}

Encoding Encoding::gaussian(int bands, double scale, std::uint64_t seed, bool include_input) {
  Encoding enc;
  enc.kind = EncodingKind::gaussian;
  enc.num_bands = bands;
  enc.include_input = include_input;
  enc.projections.resize(3 * bands, 3);
  Rng rng = derive_rng(seed, {0x656e63u});
  std::normal_distribution<double> normal(0.0, scale);
  for (int r = 0; r < enc.projections.rows(); ++r) {
    for (int c = 0; c < 3; ++c) enc.projections(r, c) = 2.0 * std::numbers::pi * normal(rng);
  }
  return enc;
}

void Encoding::encode(const Vec3& point, std::span<double> out) const {
  std::size_t o = 0;
  if (include_input) {
    for (int a = 0; a < 3; ++a) out[o++] = point[a];
  }
  for (int k = 0; k < num_bands; ++k) {
    double arg[3];
    if (kind == EncodingKind::log_linear) {
      for (int a = 0; a < 3; ++a) arg[a] = frequencies[k] * point[a];
    } else {
      for (int a = 0; a < 3; ++a) arg[a] = projections.row(3 * k + a).dot(point);
    }
    for (int a = 0; a < 3; ++a) out[o++] = std::sin(arg[a]);
    for (int a = 0; a < 3; ++a) out[o++] = std::cos(arg[a]);
  }
}

std::vector<double> Encoding::encode(const Vec3& point) const {
  std::vector<double> out(static_cast<std::size_t>(output_dim()));
  encode(point, out);
  return out;
}

template <typename Scalar>
std::vector<Scalar> encode_batch(const Encoding& enc, std::span<const Vec3> points) {
  const auto dim = static_cast<std::size_t>(enc.output_dim());
  std::vector<Scalar> out(points.size() * dim);
  std::vector<double> buf(dim);
  for (std::size_t i = 0; i < points.size(); ++i) {
    enc.encode(points[i], buf);
    for (std::size_t d = 0; d < dim; ++d) out[i * dim + d] = static_cast<Scalar>(buf[d]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename Scalar>
std::size_t FieldParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

template <typename Scalar>
bool FieldParams<Scalar>::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

template <typename Scalar>
FieldParams<Scalar> init_field(const FieldShape& shape, Rng& rng, double head_scale) {
  if (shape.input_dim < 1 || shape.width < 1) throw ConfigError("field", "input_dim and width must be positive");
  FieldParams<Scalar> p;
  p.head = shape.head;
  p.hidden = shape.hidden;
  std::vector<int> dims{shape.input_dim};
  for (int l = 0; l < kFieldDepth - 1; ++l) dims.push_back(shape.width);
  dims.push_back(head_channels(shape.head));
  for (int l = 0; l < kFieldDepth; ++l) {
    Layer<Scalar> layer;
    layer.weight.resize(dims[l + 1], dims[l]);
    layer.bias = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(dims[l + 1]);
    const double bound = std::sqrt(6.0 / dims[l]);
    std::uniform_real_distribution<double> uni(-bound, bound);
    const double scale = (l == kFieldDepth - 1) ? head_scale : 1.0;
    // Column-major fill order keeps initialization independent of Eigen's
    // internal iteration.
    for (int c = 0; c < dims[l]; ++c) {
      for (int r = 0; r < dims[l + 1]; ++r) layer.weight(r, c) = static_cast<Scalar>(scale * uni(rng));
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename Scalar>
FieldParams<Scalar> zeros_like(const FieldParams<Scalar>& params) {
  FieldParams<Scalar> z = params;
  for (auto& l : z.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return z;
}

template <typename Scalar>
FieldParams<Scalar> cast_field(const FieldParams<double>& params) {
  FieldParams<Scalar> out;
  out.head = params.head;
  out.hidden = params.hidden;
  for (const auto& l : params.layers) out.layers.push_back({l.weight.template cast<Scalar>(), l.bias.template cast<Scalar>()});
  return out;
}

template <typename Scalar>
FieldParams<double> to_double(const FieldParams<Scalar>& params) {
  FieldParams<double> out;
  out.head = params.head;
  out.hidden = params.hidden;
  for (const auto& l : params.layers) out.layers.push_back({l.weight.template cast<double>(), l.bias.template cast<double>()});
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward kernels
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kSampleChunk = 256;

template <typename Scalar>
inline void axpy_kernel(Scalar* __restrict y, Scalar a, const Scalar* __restrict x, int n) {
  for (int j = 0; j < n; ++j) y[j] += a * x[j];
}

// Fixed 8-lane reduction order, independent of the caller.
template <typename Scalar>
inline Scalar dot_kernel(const Scalar* __restrict a, const Scalar* __restrict b, int n) {
  Scalar acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  }
  for (int l = 0; j < n; ++j, ++l) acc[l] += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// y_s = W a_s + b for samples [s0, s1); processed four at a time so each
// weight column is loaded once per group.
template <typename Scalar>
void affine_forward(const Layer<Scalar>& layer, const Scalar* in, Scalar* out, std::size_t s0, std::size_t s1) {
  const int n_in = layer.in_dim();
  const int n_out = layer.out_dim();
  const Scalar* W = layer.weight.data();
  const Scalar* b = layer.bias.data();
  for (std::size_t s = s0; s < s1; ++s) std::copy(b, b + n_out, out + s * n_out);
  std::size_t s = s0;
  for (; s + 4 <= s1; s += 4) {
    const Scalar* a0 = in + s * n_in;
    const Scalar* a1 = a0 + n_in;
    const Scalar* a2 = a1 + n_in;
    const Scalar* a3 = a2 + n_in;
    Scalar* y0 = out + s * n_out;
    Scalar* y1 = y0 + n_out;
    Scalar* y2 = y1 + n_out;
    Scalar* y3 = y2 + n_out;
    for (int k = 0; k < n_in; ++k) {
      const Scalar* col = W + static_cast<std::size_t>(k) * n_out;
      if (a0[k] != Scalar(0)) axpy_kernel(y0, a0[k], col, n_out);
      if (a1[k] != Scalar(0)) axpy_kernel(y1, a1[k], col, n_out);
      if (a2[k] != Scalar(0)) axpy_kernel(y2, a2[k], col, n_out);
      if (a3[k] != Scalar(0)) axpy_kernel(y3, a3[k], col, n_out);
    }
  }
  for (; s < s1; ++s) {
    const Scalar* a = in + s * n_in;
    Scalar* y = out + s * n_out;
    for (int k = 0; k < n_in; ++k) {
      if (a[k] != Scalar(0)) axpy_kernel(y, a[k], W + static_cast<std::size_t>(k) * n_out, n_out);
    }
  }
}

template <typename Scalar>
void apply_activation(std::span<Scalar> v, bool last, HiddenActivation hidden) {
  if (last) {
    for (Scalar& x : v) x = Scalar(1) / (Scalar(1) + std::exp(-x));
  } else if (hidden == HiddenActivation::relu) {
    for (Scalar& x : v) x = x > Scalar(0) ? x : Scalar(0);
  } else {
    for (Scalar& x : v) x = std::tanh(x);
  }
}

template <typename Scalar>
void accumulate(FieldGrads<Scalar>& into, const FieldGrads<Scalar>& from) {
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    into.layers[l].weight += from.layers[l].weight;
    into.layers[l].bias += from.layers[l].bias;
  }
}

}  // namespace

template <typename Scalar>
std::vector<Scalar> field_forward(const FieldParams<Scalar>& params, std::span<const Scalar> inputs, int batch,
                                  FieldTrace<Scalar>* trace) {
  if (params.layers.empty()) throw ShapeError("field_forward: empty field");
  const auto B = static_cast<std::size_t>(batch);
  if (inputs.size() != B * static_cast<std::size_t>(params.input_dim())) {
    throw ShapeError("field_forward: input size " + std::to_string(inputs.size()) + " does not match batch " +
                     std::to_string(batch) + " x dim " + std::to_string(params.input_dim()));
  }
  const std::size_t L = params.layers.size();
  std::vector<std::vector<Scalar>> acts(L + 1);
  acts[0].assign(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < L; ++l) acts[l + 1].resize(B * params.layers[l].out_dim());

  // Each chunk runs all layers for its samples.
  parallel_chunks(B, kSampleChunk, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t l = 0; l < L; ++l) {
      const auto& layer = params.layers[l];
      affine_forward(layer, acts[l].data(), acts[l + 1].data(), s0, s1);
      const auto n_out = static_cast<std::size_t>(layer.out_dim());
      std::span<Scalar> out(acts[l + 1].data() + s0 * n_out, (s1 - s0) * n_out);
      apply_activation(out, l + 1 == L, params.hidden);
    }
  });
  for (std::size_t l = 0; l < L; ++l) {
    for (Scalar v : acts[l + 1]) {
      if (!std::isfinite(v)) {
        throw DivergenceError("field_forward: non-finite activation at layer " + std::to_string(l));
      }
    }
  }
  std::vector<Scalar> out = acts[L];
  if (trace) {
    trace->batch = batch;
    trace->acts = std::move(acts);
  }
  return out;
}

template <typename Scalar>
FieldGrads<Scalar> field_backward(const FieldParams<Scalar>& params, const FieldTrace<Scalar>& trace,
                                  std::span<const Scalar> output_grads) {
  const std::size_t L = params.layers.size();
  const auto B = static_cast<std::size_t>(trace.batch);
  if (trace.acts.size() != L + 1 || trace.acts[0].size() != B * static_cast<std::size_t>(params.input_dim())) {
    throw ShapeError("field_backward: trace does not match the field");
  }
  if (output_grads.size() != B * static_cast<std::size_t>(params.output_dim())) {
    throw ShapeError("field_backward: output gradient size " + std::to_string(output_grads.size()) +
                     " does not match batch " + std::to_string(B) + " x " + std::to_string(params.output_dim()));
  }
  const std::size_t chunks = (B + kSampleChunk - 1) / kSampleChunk;
  std::vector<FieldGrads<Scalar>> partial(chunks, zeros_like(params));
  int max_width = 0;
  for (const auto& l : params.layers) max_width = std::max({max_width, l.in_dim(), l.out_dim()});

  parallel_chunks(B, kSampleChunk, [&](std::size_t s0, std::size_t s1) {
    auto& g = partial[s0 / kSampleChunk];
    std::vector<Scalar> delta(static_cast<std::size_t>(max_width));
    std::vector<Scalar> delta_in(static_cast<std::size_t>(max_width));
    for (std::size_t s = s0; s < s1; ++s) {
      // Output layer: logistic derivative y(1 − y).
      {
        const int n_out = params.output_dim();
        const Scalar* y = trace.acts[L].data() + s * n_out;
        for (int j = 0; j < n_out; ++j) delta[j] = output_grads[s * n_out + j] * y[j] * (Scalar(1) - y[j]);
      }
      for (std::size_t li = L; li-- > 0;) {
        const auto& layer = params.layers[li];
        auto& gl = g.layers[li];
        const int n_in = layer.in_dim();
        const int n_out = layer.out_dim();
        const Scalar* a = trace.acts[li].data() + s * n_in;
        Scalar* gb = gl.bias.data();
        for (int j = 0; j < n_out; ++j) gb[j] += delta[j];
        Scalar* gw = gl.weight.data();
        for (int k = 0; k < n_in; ++k) {
          if (a[k] != Scalar(0)) axpy_kernel(gw + static_cast<std::size_t>(k) * n_out, a[k], delta.data(), n_out);
        }
        if (li == 0) break;
        const Scalar* W = layer.weight.data();
        for (int k = 0; k < n_in; ++k) {
          Scalar d = dot_kernel(W + static_cast<std::size_t>(k) * n_out, delta.data(), n_out);
          if (params.hidden == HiddenActivation::relu) {
            d = a[k] > Scalar(0) ? d : Scalar(0);
          } else {
            d *= Scalar(1) - a[k] * a[k];
          }
          delta_in[k] = d;
        }
        std::swap(delta, delta_in);
      }
    }
  });

  FieldGrads<Scalar> total = zeros_like(params);
  for (const auto& p : partial) accumulate(total, p);
  return total;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Scalar>
bool adam_update(std::span<Scalar> params, std::span<const Scalar> grads, std::span<Scalar> m, std::span<Scalar> v,
                 std::int64_t step, const AdamHyper& hyper) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adam_update: buffer sizes differ");
  }
  for (Scalar g : grads) {
    if (!std::isfinite(g)) return false;
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
    const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
    m[i] = static_cast<Scalar>(mi);
    v[i] = static_cast<Scalar>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    params[i] = static_cast<Scalar>(params[i] - hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
  }
  return true;
}

template <typename Scalar>
AdamState<Scalar> make_adam_state(const FieldParams<Scalar>& params, const AdamHyper& hyper) {
  return AdamState<Scalar>{zeros_like(params), zeros_like(params), 0, hyper};
}

template <typename Scalar>
bool adam_step(FieldParams<Scalar>& params, const FieldGrads<Scalar>& grads, AdamState<Scalar>& state) {
  if (grads.layers.size() != params.layers.size() || state.m.layers.size() != params.layers.size()) {
    throw ShapeError("adam_step: layer count mismatch");
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (grads.layers[l].weight.size() != params.layers[l].weight.size() ||
        grads.layers[l].bias.size() != params.layers[l].bias.size()) {
      throw ShapeError("adam_step: layer " + std::to_string(l) + " shape mismatch");
    }
  }
  if (!grads.all_finite()) return false;
  const std::int64_t step = state.step + 1;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    const auto& g = grads.layers[l];
    auto& m = state.m.layers[l];
    auto& v = state.v.layers[l];
    adam_update<Scalar>({p.weight.data(), static_cast<std::size_t>(p.weight.size())},
                        {g.weight.data(), static_cast<std::size_t>(g.weight.size())},
                        {m.weight.data(), static_cast<std::size_t>(m.weight.size())},
                        {v.weight.data(), static_cast<std::size_t>(v.weight.size())}, step, state.hyper);
    adam_update<Scalar>({p.bias.data(), static_cast<std::size_t>(p.bias.size())},
                        {g.bias.data(), static_cast<std::size_t>(g.bias.size())},
                        {m.bias.data(), static_cast<std::size_t>(m.bias.size())},
                        {v.bias.data(), static_cast<std::size_t>(v.bias.size())}, step, state.hyper);
  }
  state.step = step;
  return true;
}

// ---------------------------------------------------------------------------
// Maps
// ---------------------------------------------------------------------------

std::vector<std::int32_t> gutter_sources(const std::vector<std::uint8_t>& valid, Resolution res, int rings) {
  const int H = res.height;
  const int W = res.width;
  std::vector<std::int32_t> source(res.pixels(), -1);
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) source[i] = static_cast<std::int32_t>(i);
  }
  for (int ring = 0; ring < rings; ++ring) {
    std::vector<std::int32_t> next = source;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * W + x;
        if (source[i] >= 0) continue;
        std::int32_t best = -1;
        long best_d2 = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy;
            const int nx = x + dx;
            if ((dy == 0 && dx == 0) || ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            const std::int32_t cand = source[static_cast<std::size_t>(ny) * W + nx];
            if (cand < 0) continue;
            const long sy = cand / W - y;
            const long sx = cand % W - x;
            const long d2 = sy * sy + sx * sx;
            if (best < 0 || d2 < best_d2 || (d2 == best_d2 && cand < best)) {
              best = cand;
              best_d2 = d2;
            }
          }
        }
        next[i] = best;
      }
    }
    source = std::move(next);
  }
  return source;
}

Map make_map(const TexelSurfaceMap& tsm, int channels, std::span<const double> valid_values) {
  Map map;
  const Resolution res = tsm.resolution;
  map.values = Image(channels, res);
  map.valid.resize(res.pixels());
  std::size_t n = 0;
  for (std::size_t i = 0; i < tsm.entries.size(); ++i) {
    map.valid[i] = tsm.entries[i].valid ? 1 : 0;
    if (map.valid[i]) {
      if ((n + 1) * static_cast<std::size_t>(channels) > valid_values.size()) {
        throw ShapeError("make_map: not enough values for the valid texels");
      }
      for (int c = 0; c < channels; ++c) map.values.plane(c)[i] = valid_values[n * channels + c];
      ++n;
    }
  }
  if (n * static_cast<std::size_t>(channels) != valid_values.size()) {
    throw ShapeError("make_map: value count does not match the valid texels");
  }
  map.source = gutter_sources(map.valid, res);
  for (std::size_t i = 0; i < map.source.size(); ++i) {
    if (map.valid[i] || map.source[i] < 0) continue;
    for (int c = 0; c < channels; ++c) map.values.plane(c)[i] = map.values.plane(c)[map.source[i]];
  }
  return map;
}

Map constant_map(const TexelSurfaceMap& tsm, std::span<const double> value) {
  const std::size_t n = tsm.valid_count();
  std::vector<double> vals(n * value.size());
  for (std::size_t i = 0; i < n; ++i) std::copy(value.begin(), value.end(), vals.begin() + i * value.size());
  return make_map(tsm, static_cast<int>(value.size()), vals);
}

std::vector<double> fold_map_grad(const Map& map, const Image& grad) {
  require_same_shape(map.values, grad, "fold_map_grad");
  const int C = map.channels();
  const std::size_t P = map.valid.size();
  Image folded = grad;
  for (std::size_t i = 0; i < P; ++i) {
    if (map.valid[i] || map.source[i] < 0) continue;
    for (int c = 0; c < C; ++c) folded.plane(c)[map.source[i]] += grad.plane(c)[i];
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < P; ++i) {
    if (!map.valid[i]) continue;
    for (int c = 0; c < C; ++c) out.push_back(folded.plane(c)[i]);
  }
  return out;
}

template <typename Scalar>
BakeResult<Scalar> bake_map_traced(const FieldParams<Scalar>& params, const Encoding& enc, const TexelSurfaceMap& tsm) {
  if (params.input_dim() != enc.output_dim()) {
    throw ShapeError("bake_map: field input dim " + std::to_string(params.input_dim()) + " != encoding dim " +
                     std::to_string(enc.output_dim()));
  }
  std::vector<Vec3> points;
  points.reserve(tsm.entries.size());
  for (const auto& e : tsm.entries) {
    if (e.valid) points.push_back(e.point);
  }
  const auto inputs = encode_batch<Scalar>(enc, points);
  BakeResult<Scalar> result;
  const auto out = field_forward<Scalar>(params, inputs, static_cast<int>(points.size()), &result.trace);
  const std::vector<double> values(out.begin(), out.end());
  result.map = make_map(tsm, params.output_dim(), values);
  return result;
}

template <typename Scalar>
FieldGrads<Scalar> bake_backward(const FieldParams<Scalar>& params, const BakeResult<Scalar>& bake,
                                 const Image& map_grad) {
  const auto folded = fold_map_grad(bake.map, map_grad);
  const std::vector<Scalar> g(folded.begin(), folded.end());
  return field_backward<Scalar>(params, bake.trace, g);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_checkpoint(const FieldParamsF& params) {
  ByteWriter w;
  w.put_bytes("NF01");
  w.put_u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    w.put_u32(static_cast<std::uint32_t>(l.in_dim()));
    w.put_u32(static_cast<std::uint32_t>(l.out_dim()));
  }
  for (const auto& l : params.layers) {
    for (int r = 0; r < l.out_dim(); ++r) {
      for (int c = 0; c < l.in_dim(); ++c) w.put_f32(l.weight(r, c));
    }
    for (int r = 0; r < l.out_dim(); ++r) w.put_f32(l.bias(r));
  }
  return std::move(w.bytes());
}

FieldParamsF deserialize_checkpoint(std::span<const std::uint8_t> bytes, HiddenActivation hidden) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || r.get_string(4) != "NF01") throw InputError("not a field checkpoint (bad magic)");
  const std::uint32_t count = r.get_u32();
  if (count == 0 || count > 64) throw InputError("checkpoint has implausible layer count " + std::to_string(count));
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(count);
  for (auto& [in, out] : dims) {
    in = r.get_u32();
    out = r.get_u32();
    if (in == 0 || out == 0 || in > (1u << 16) || out > (1u << 16)) throw InputError("checkpoint has bad layer dims");
  }
  for (std::size_t l = 1; l < dims.size(); ++l) {
    if (dims[l].first != dims[l - 1].second) throw InputError("checkpoint layer dims do not chain");
  }
  FieldParamsF p;
  p.hidden = hidden;
  p.head = dims.back().second == 1 ? HeadKind::probability : HeadKind::color;
  if (dims.back().second != 1 && dims.back().second != 3) throw InputError("checkpoint head must have 1 or 3 outputs");
  for (const auto& [in, out] : dims) {
    Layer<float> l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    for (std::uint32_t rr = 0; rr < out; ++rr) {
      for (std::uint32_t c = 0; c < in; ++c) l.weight(rr, c) = r.get_f32();
    }
    for (std::uint32_t rr = 0; rr < out; ++rr) l.bias(rr) = r.get_f32();
    p.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) throw InputError("checkpoint has trailing bytes");
  return p;
}

void write_checkpoint(const FieldParamsF& params, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(params));
}

FieldParamsF read_checkpoint(const std::filesystem::path& path, HiddenActivation hidden) {
  return deserialize_checkpoint(read_file_bytes(path), hidden);
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

#define CSDPAINT_INSTANTIATE_FIELDS(S)                                                                            \
  template struct FieldParams<S>;                                                                                 \
  template std::vector<S> encode_batch<S>(const Encoding&, std::span<const Vec3>);                                \
  template FieldParams<S> init_field<S>(const FieldShape&, Rng&, double);                                         \
  template FieldParams<S> zeros_like<S>(const FieldParams<S>&);                                                   \
  template FieldParams<S> cast_field<S>(const FieldParams<double>&);                                              \
  template FieldParams<double> to_double<S>(const FieldParams<S>&);                                               \
  template std::vector<S> field_forward<S>(const FieldParams<S>&, std::span<const S>, int, FieldTrace<S>*);       \
  template FieldGrads<S> field_backward<S>(const FieldParams<S>&, const FieldTrace<S>&, std::span<const S>);      \
  template bool adam_update<S>(std::span<S>, std::span<const S>, std::span<S>, std::span<S>, std::int64_t,        \
                               const AdamHyper&);                                                                 \
  template AdamState<S> make_adam_state<S>(const FieldParams<S>&, const AdamHyper&);                              \
  template bool adam_step<S>(FieldParams<S>&, const FieldGrads<S>&, AdamState<S>&);                               \
  template BakeResult<S> bake_map_traced<S>(const FieldParams<S>&, const Encoding&, const TexelSurfaceMap&);      \
  template FieldGrads<S> bake_backward<S>(const FieldParams<S>&, const BakeResult<S>&, const Image&);

CSDPAINT_INSTANTIATE_FIELDS(float)
CSDPAINT_INSTANTIATE_FIELDS(double)

#undef CSDPAINT_INSTANTIATE_FIELDS

}  // namespace csdpaint
