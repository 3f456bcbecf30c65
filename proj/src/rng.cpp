#include "csdpaint/rng.hpp"

#include <vector>

namespace csdpaint {

Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * stream.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (std::uint64_t s : stream) push(s);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

void fill_standard_normal(Image& img, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : img.data()) v = normal(rng);
}

Image standard_normal_like(int channels, Resolution res, Rng& rng) {
  Image img(channels, res);
  fill_standard_normal(img, rng);
  return img;
}

}  // namespace csdpaint
