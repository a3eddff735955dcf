// SPDX-License-Identifier: Apache-2.0
#include "dvit/dataset.hpp"

#include <cmath>
#include <random>
#include <string>

#include "dvit/errors.hpp"

namespace dvit {

void DatasetConfig::validate() const {
  if (image_size < 4 || image_size % 2 != 0)
    throw ConfigError("dataset: image_size must be even and at least 4, got " +
                      std::to_string(image_size));
  if (channels == 0) throw ConfigError("dataset: channels must be positive");
  if (count == 0) throw ConfigError("dataset: count must be positive");
  if (patterns < 3 || patterns > 6)
    throw ConfigError("dataset: patterns must be in [3, 6], got " +
                      std::to_string(patterns));
  if (!(noise >= 0.0f) || !std::isfinite(noise))
    throw ConfigError("dataset: noise must be finite and non-negative");
}

float pattern_value(std::size_t id, std::size_t y, std::size_t x,
                    std::size_t image_size) {
  const std::size_t period = image_size / 8 > 0 ? image_size / 8 : 1;
  const float lo = 0.1f, hi = 0.9f;
  const double span = 2.0 * double(image_size - 1);
  switch (id) {
    case 0:
      return (y / period) % 2 ? hi : lo;
    case 1:
      return (x / period) % 2 ? hi : lo;
    case 2:
      return (y / period + x / period) % 2 ? hi : lo;
    case 3:
      return float(double(y + x) / span);
    case 4: {
      const double c = 0.5 * double(image_size - 1);
      const double r = std::hypot(double(y) - c, double(x) - c);
      return (std::size_t(r) / period) % 2 ? hi : lo;
    }
    case 5:
      return float(double(y + (image_size - 1 - x)) / span);
    default:
      throw ContractError("pattern_value: pattern id out of range");
  }
}

SyntheticDataset::SyntheticDataset(const DatasetConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  std::mt19937 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_class(0, cfg.patterns - 1);
  std::uniform_int_distribution<std::size_t> pick_pair(0, 5);
  std::normal_distribution<float> noise(0.0f, cfg.noise == 0.0f ? 1.0f : cfg.noise);

  // The six ways to choose the dominant pattern's two quadrants.
  static const std::size_t kPairs[6][2] = {{0, 1}, {0, 2}, {0, 3},
                                           {1, 2}, {1, 3}, {2, 3}};
  const std::size_t s = cfg.image_size, half = s / 2, c = cfg.channels;

  images_.reserve(cfg.count);
  labels_.reserve(cfg.count);
  for (std::size_t n = 0; n < cfg.count; ++n) {
    const std::size_t dominant = pick_class(rng);
    const std::size_t pair = pick_pair(rng);

    // Two distinct fillers, neither equal to the dominant id.
    std::uniform_int_distribution<std::size_t> pick_o1(0, cfg.patterns - 2);
    std::size_t o1 = pick_o1(rng);
    if (o1 >= dominant) ++o1;
    std::uniform_int_distribution<std::size_t> pick_o2(0, cfg.patterns - 3);
    std::size_t o2 = pick_o2(rng);
    for (std::size_t skip : {std::min(dominant, o1), std::max(dominant, o1)})
      if (o2 >= skip) ++o2;

    // Dominant pattern in the chosen pair of quadrants; the remaining two,
    // in ascending order, get o1 then o2.
    std::size_t quad_pattern[4] = {dominant, dominant, dominant, dominant};
    bool first_free = true;
    for (std::size_t q = 0; q < 4; ++q) {
      if (q == kPairs[pair][0] || q == kPairs[pair][1]) continue;
      quad_pattern[q] = first_free ? o1 : o2;
      first_free = false;
    }

    Tensor img({s, s, c});
    float* px = img.data();
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t q = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
        const float base = pattern_value(quad_pattern[q], y, x, s);
        for (std::size_t ch = 0; ch < c; ++ch) {
          float v = base;
          if (cfg.noise > 0.0f) v += noise(rng);
          px[(y * s + x) * c + ch] = v;
        }
      }
    images_.push_back(std::move(img));
    labels_.push_back(dominant);
  }
}

}  // namespace dvit
