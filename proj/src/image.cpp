#include "csdpaint/image.hpp"

#include <cmath>

#include "csdpaint/errors.hpp"

namespace csdpaint {

std::string to_string(const Resolution& res) {
  return std::to_string(res.height) + "x" + std::to_string(res.width);
}

Image::Image(int channels, Resolution res, double fill)
    : channels_(channels), res_(res), data_(static_cast<std::size_t>(channels) * res.pixels(), fill) {
  if (channels < 0 || res.height < 0 || res.width < 0) {
    throw ShapeError("negative image dimensions");
  }
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.channels()) + "x" +
                     to_string(a.resolution()) + " vs " + std::to_string(b.channels()) + "x" +
                     to_string(b.resolution()) + ")");
  }
}

double l2_norm(const Image& img) {
  double sum = 0.0;
  for (double v : img.data()) sum += v * v;
  return std::sqrt(sum);
}

double max_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "mean_abs_diff");
  if (a.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

bool all_finite(const Image& img) {
  for (double v : img.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void axpy(double scale, const Image& b, Image& a) {
  require_same_shape(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

Image scaled(const Image& img, double scale) {
  Image out = img;
  for (double& v : out.data()) v *= scale;
  return out;
}

Image area_downsample(const Image& img, int factor) {
  if (factor < 1 || img.height() % factor != 0 || img.width() % factor != 0) {
    throw ShapeError("area_downsample: factor " + std::to_string(factor) + " does not divide " +
                     to_string(img.resolution()));
  }
  const Resolution lo{img.height() / factor, img.width() / factor};
  Image out(img.channels(), lo);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < lo.height; ++y) {
      for (int x = 0; x < lo.width; ++x) {
        double sum = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) sum += img.at(c, y * factor + dy, x * factor + dx);
        }
        out.at(c, y, x) = sum * inv;
      }
    }
  }
  return out;
}

Image area_downsample_adjoint(const Image& coarse_grad, int factor) {
  const Resolution hi{coarse_grad.height() * factor, coarse_grad.width() * factor};
  Image out(coarse_grad.channels(), hi);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < hi.height; ++y) {
      for (int x = 0; x < hi.width; ++x) out.at(c, y, x) = coarse_grad.at(c, y / factor, x / factor) * inv;
    }
  }
  return out;
}

Image nearest_upsample(const Image& img, int factor) {
  const Resolution hi{img.height() * factor, img.width() * factor};
  Image out(img.channels(), hi);
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < hi.height; ++y) {
      for (int x = 0; x < hi.width; ++x) out.at(c, y, x) = img.at(c, y / factor, x / factor);
    }
  }
  return out;
}

}  // namespace csdpaint
