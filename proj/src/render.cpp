#include "csdpaint/render.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>

#include "csdpaint/errors.hpp"
#include "csdpaint/parallel.hpp"

namespace csdpaint {

Vec3 Camera::eye() const {
  const double ce = std::cos(elevation);
  return look_at + radius * Vec3(ce * std::sin(azimuth), std::sin(elevation), ce * std::cos(azimuth));
}

void validate_camera(const Camera& cam) {
  if (!(cam.radius > 0.0)) throw ConfigError("camera.radius", "radius must be positive");
  if (!(cam.fov_y > 0.0 && cam.fov_y < std::numbers::pi)) throw ConfigError("camera.fov_y", "fov_y must be in (0, pi)");
  if (!(std::abs(cam.elevation) < 0.5 * std::numbers::pi)) {
    throw ConfigError("camera.elevation", "elevation must be in (-pi/2, pi/2)");
  }
}

void validate_camera_policy(const CameraPolicy& policy) {
  auto check = [](const Range& r, const char* key) {
    if (!(r.min <= r.max) || !std::isfinite(r.min) || !std::isfinite(r.max)) {
      throw ConfigError(key, "empty range [" + std::to_string(r.min) + ", " + std::to_string(r.max) + "]");
    }
  };
  check(policy.azimuth, "camera.azimuth");
  check(policy.elevation, "camera.elevation");
  check(policy.radius, "camera.radius");
  if (!(policy.radius.min > 0.0)) throw ConfigError("camera.radius", "radius must be positive");
  if (!(policy.elevation.min > -0.5 * std::numbers::pi && policy.elevation.max < 0.5 * std::numbers::pi)) {
    throw ConfigError("camera.elevation", "elevation must stay inside (-pi/2, pi/2)");
  }
  if (!(policy.fov_y > 0.0 && policy.fov_y < std::numbers::pi)) {
    throw ConfigError("camera.fov_y", "fov_y must be in (0, pi)");
  }
}

Camera sample_camera(Rng& rng, const CameraPolicy& policy) {
  validate_camera_policy(policy);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Range& r) {
    const double u = unit(rng);
    return r.min == r.max ? r.min : r.min + (r.max - r.min) * u;
  };
  Camera cam;
  cam.azimuth = draw(policy.azimuth);
  cam.elevation = draw(policy.elevation);
  cam.radius = draw(policy.radius);
  cam.fov_y = policy.fov_y;
  cam.look_at = policy.look_at;
  return cam;
}

namespace {

struct ProjectedVertex {
  double px, py;  // pixel coordinates
  double depth;   // distance along the view axis
};

struct CameraFrame {
  Vec3 eye, right, up, forward;
  double tan_half;
};

CameraFrame make_frame(const Camera& cam) {
  CameraFrame f;
  f.eye = cam.eye();
  f.forward = (cam.look_at - f.eye).normalized();
  Vec3 world_up(0.0, 1.0, 0.0);
  f.right = f.forward.cross(world_up).normalized();
  f.up = f.right.cross(f.forward);
  f.tan_half = std::tan(0.5 * cam.fov_y);
  return f;
}

constexpr double kNear = 1e-3;

}  // namespace

RenderedView rasterize(const Mesh& mesh, const Image& texture, const Camera& camera, Resolution resolution,
                       const Rgb& background, const RasterOptions& options) {
  validate_camera(camera);
  if (texture.channels() != 3) throw ShapeError("rasterize: texture must have 3 channels");
  if (resolution.height < 1 || resolution.width < 1) throw ShapeError("rasterize: empty resolution");
  const int H = resolution.height;
  const int W = resolution.width;
  const double aspect = static_cast<double>(W) / H;
  const CameraFrame frame = make_frame(camera);

  std::vector<ProjectedVertex> proj(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 d = mesh.vertices[i] - frame.eye;
    const double depth = d.dot(frame.forward);
    const double x = d.dot(frame.right) / (depth * frame.tan_half * aspect);
    const double y = d.dot(frame.up) / (depth * frame.tan_half);
    proj[i] = {(x + 1.0) * 0.5 * W, (1.0 - y) * 0.5 * H, depth};
  }

  // Pass 1: nearest face and perspective-correct barycentrics per pixel.
  std::vector<double> zbuf(resolution.pixels(), std::numeric_limits<double>::infinity());
  std::vector<std::int32_t> face_of(resolution.pixels(), -1);
  std::vector<std::array<double, 3>> bary_of(resolution.pixels());
  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    const ProjectedVertex& a = proj[f[0]];
    const ProjectedVertex& b = proj[f[1]];
    const ProjectedVertex& c = proj[f[2]];
    if (a.depth < kNear || b.depth < kNear || c.depth < kNear) continue;
    const double area = (b.px - a.px) * (c.py - a.py) - (b.py - a.py) * (c.px - a.px);
    if (area == 0.0) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.px, b.px, c.px}) - 0.5)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max({a.px, b.px, c.px}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.py, b.py, c.py}) - 0.5)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max({a.py, b.py, c.py}) - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      const double sy = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double sx = x + 0.5;
        const double w0 = ((b.px - sx) * (c.py - sy) - (b.py - sy) * (c.px - sx)) / area;
        const double w1 = ((c.px - sx) * (a.py - sy) - (c.py - sy) * (a.px - sx)) / area;
        const double w2 = ((a.px - sx) * (b.py - sy) - (a.py - sy) * (b.px - sx)) / area;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double q0 = w0 / a.depth;
        const double q1 = w1 / b.depth;
        const double q2 = w2 / c.depth;
        const double inv_depth = q0 + q1 + q2;
        const double depth = 1.0 / inv_depth;
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        if (depth < zbuf[p]) {
          zbuf[p] = depth;
          face_of[p] = static_cast<std::int32_t>(fi);
          bary_of[p] = {q0 / inv_depth, q1 / inv_depth, q2 / inv_depth};
        }
      }
    }
  }

  // Pass 2: texture lookup and shading.
  RenderedView view;
  view.image = Image(3, resolution);
  view.samples.resize(resolution.pixels());
  view.background = background;
  view.texture_resolution = texture.resolution();
  view.camera = camera;
  const int TH = texture.height();
  const int TW = texture.width();
  parallel_chunks(static_cast<std::size_t>(H), 8, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t y = r0; y < r1; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t p = y * W + x;
        auto& s = view.samples[p];
        if (face_of[p] < 0) {
          for (int c = 0; c < 3; ++c) view.image.plane(c)[p] = background[c];
          continue;
        }
        const int fi = face_of[p];
        const auto& bc = bary_of[p];
        const auto& f = mesh.faces[fi];
        const Vec2 uv = forward_uv(mesh, fi, bc);
        const Vec3 point = bc[0] * mesh.vertices[f[0]] + bc[1] * mesh.vertices[f[1]] + bc[2] * mesh.vertices[f[2]];
        const Vec3 light = (frame.eye - point).normalized();
        const double lambert = mesh.normals[fi].dot(light);
        const double shade = std::clamp(lambert, options.ambient_floor, 1.0);

        const double tx = uv.x() * TW - 0.5;
        const double ty = uv.y() * TH - 0.5;
        const double fx0 = std::floor(tx);
        const double fy0 = std::floor(ty);
        const double fx = tx - fx0;
        const double fy = ty - fy0;
        const int cx0 = std::clamp(static_cast<int>(fx0), 0, TW - 1);
        const int cx1 = std::clamp(static_cast<int>(fx0) + 1, 0, TW - 1);
        const int cy0 = std::clamp(static_cast<int>(fy0), 0, TH - 1);
        const int cy1 = std::clamp(static_cast<int>(fy0) + 1, 0, TH - 1);

        s.hit = true;
        s.face = fi;
        s.shade = shade;
        s.texel = {cy0 * TW + cx0, cy0 * TW + cx1, cy1 * TW + cx0, cy1 * TW + cx1};
        s.weight = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
        for (int c = 0; c < 3; ++c) {
          const auto tex = texture.plane(c);
          double v = 0.0;
          for (int k = 0; k < 4; ++k) v += s.weight[k] * tex[s.texel[k]];
          view.image.plane(c)[p] = shade * v;
        }
      }
    }
  });
  return view;
}

Image backprop_image_grad(const RenderedView& view, const Image& image_grad) {
  if (image_grad.channels() != 3 || image_grad.resolution() != view.image.resolution()) {
    throw ShapeError("backprop_image_grad: gradient shape " + std::to_string(image_grad.channels()) + "x" +
                     to_string(image_grad.resolution()) + " does not match view " +
                     to_string(view.image.resolution()));
  }
  if (view.samples.size() != view.image.resolution().pixels()) {
    throw ShapeError("backprop_image_grad: view has no sample trace");
  }
  Image grad(3, view.texture_resolution);
  for (int c = 0; c < 3; ++c) {
    const auto g = image_grad.plane(c);
    auto out = grad.plane(c);
    for (std::size_t p = 0; p < view.samples.size(); ++p) {
      const auto& s = view.samples[p];
      if (!s.hit || g[p] == 0.0) continue;
      const double sg = s.shade * g[p];
      for (int k = 0; k < 4; ++k) out[s.texel[k]] += s.weight[k] * sg;
    }
  }
  return grad;
}

std::vector<Image> ViewPyramid::images() const {
  std::vector<Image> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(v.image);
  return out;
}

void validate_stage_resolutions(std::span<const Resolution> resolutions) {
  if (resolutions.empty()) throw ConfigError("stages", "at least one stage is required");
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    if (resolutions[i].height < 1 || resolutions[i].width < 1) {
      throw ConfigError("stages." + std::to_string(i) + ".resolution", "resolution must be positive");
    }
    if (i > 0 && !(resolutions[i].height > resolutions[i - 1].height && resolutions[i].width > resolutions[i - 1].width)) {
      throw ConfigError("stages." + std::to_string(i) + ".resolution", "stage resolutions must strictly increase");
    }
  }
}

ViewPyramid render_pyramid(const Mesh& mesh, const Image& texture, const Camera& camera,
                           std::span<const Resolution> resolutions, const Rgb& background,
                           const RasterOptions& options, PyramidMode mode) {
  validate_stage_resolutions(resolutions);
  ViewPyramid pyramid;
  pyramid.mode = mode;
  if (mode == PyramidMode::direct) {
    for (const auto& res : resolutions) pyramid.views.push_back(rasterize(mesh, texture, camera, res, background, options));
    return pyramid;
  }
  const Resolution top = resolutions.back();
  RenderedView full = rasterize(mesh, texture, camera, top, background, options);
  for (std::size_t i = 0; i + 1 < resolutions.size(); ++i) {
    const Resolution res = resolutions[i];
    if (top.height % res.height != 0 || top.width % res.width != 0 || top.height / res.height != top.width / res.width) {
      throw ConfigError("pyramid_mode", "downsample mode needs stage resolutions that divide the top stage evenly");
    }
    RenderedView low;
    low.image = area_downsample(full.image, top.height / res.height);
    low.background = background;
    low.texture_resolution = full.texture_resolution;
    low.camera = camera;
    pyramid.views.push_back(std::move(low));
  }
  pyramid.views.push_back(std::move(full));
  return pyramid;
}

Image backprop_pyramid(const ViewPyramid& pyramid, std::span<const Image> grads) {
  if (grads.size() != pyramid.views.size()) throw ShapeError("backprop_pyramid: one gradient per stage is required");
  if (pyramid.mode == PyramidMode::direct) {
    Image total(3, pyramid.views.front().texture_resolution);
    for (std::size_t i = 0; i < grads.size(); ++i) axpy(1.0, backprop_image_grad(pyramid.views[i], grads[i]), total);
    return total;
  }
  const auto& top = pyramid.views.back();
  Image image_grad = grads.back();
  require_same_shape(image_grad, top.image, "backprop_pyramid");
  for (std::size_t i = 0; i + 1 < grads.size(); ++i) {
    require_same_shape(grads[i], pyramid.views[i].image, "backprop_pyramid");
    axpy(1.0, area_downsample_adjoint(grads[i], top.image.height() / grads[i].height()), image_grad);
  }
  return backprop_image_grad(top, image_grad);
}

Image hit_mask(const RenderedView& view) {
  Image mask(1, view.image.resolution());
  for (std::size_t p = 0; p < view.samples.size(); ++p) mask[p] = view.samples[p].hit ? 1.0 : 0.0;
  return mask;
}

}  // namespace csdpaint
