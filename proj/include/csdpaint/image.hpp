#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace csdpaint {

using Rgb = std::array<double, 3>;

struct Resolution {
  int height = 0;
  int width = 0;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

std::string to_string(const Resolution& res);

// Dense planar image, channel-major (C, H, W) to match the wire format.
class Image {
 public:
  Image() = default;
  Image(int channels, Resolution res, double fill = 0.0);

  int channels() const { return channels_; }
  int height() const { return res_.height; }
  int width() const { return res_.width; }
  Resolution resolution() const { return res_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> plane(int c) { return std::span<double>(data_).subspan(c * res_.pixels(), res_.pixels()); }
  std::span<const double> plane(int c) const {
    return std::span<const double>(data_).subspan(c * res_.pixels(), res_.pixels());
  }

  bool same_shape(const Image& other) const { return channels_ == other.channels_ && res_ == other.res_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * res_.height + y) * res_.width + x;
  }

  int channels_ = 0;
  Resolution res_{};
  std::vector<double> data_;
};

// Throws ShapeError with `what` in the message when shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

double l2_norm(const Image& img);
double max_abs_diff(const Image& a, const Image& b);
double mean_abs_diff(const Image& a, const Image& b);
bool all_finite(const Image& img);

// a += scale * b
void axpy(double scale, const Image& b, Image& a);
Image scaled(const Image& img, double scale);

// Area (box) downsampling by an integer factor; resolution must divide.
Image area_downsample(const Image& img, int factor);
// Adjoint of area_downsample: distributes each coarse value / factor² over
// its block.
Image area_downsample_adjoint(const Image& coarse_grad, int factor);
// Nearest-neighbour upsampling by an integer factor.
Image nearest_upsample(const Image& img, int factor);

}  // namespace csdpaint
