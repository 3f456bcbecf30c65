#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "csdpaint/image.hpp"

namespace csdpaint {

using Rng = std::mt19937_64;

// Deterministically derives an independent stream from a base seed and a
// list of stream labels (iteration, branch, stage, ...).
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

// Fills an image with i.i.d. standard normal samples, in storage order.
void fill_standard_normal(Image& img, Rng& rng);
Image standard_normal_like(int channels, Resolution res, Rng& rng);

}  // namespace csdpaint
