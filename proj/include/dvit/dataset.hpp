// SPDX-License-Identifier: Apache-2.0
//
// Procedural image stream for the proxy classification task. Each image is
// split into four quadrants; one pattern id fills two of them and two other
// distinct patterns fill the rest, so the label (the dominant pattern) is
// unambiguous. Generation is eager and fully determined by the seed.
#pragma once

#include <cstdint>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

struct DatasetConfig {
  std::size_t image_size = 32;  // even, so quadrants tile exactly
  std::size_t channels = 1;
  std::size_t count = 256;
  std::size_t patterns = 4;  // class count K, 3..6
  std::uint32_t seed = 1;
  float noise = 0.05f;  // stddev of additive pixel noise

  void validate() const;
};

// Base value of pattern `id` at pixel (y, x), before noise. Patterns 0..5:
// horizontal stripes, vertical stripes, checkerboard, diagonal gradient,
// concentric rings, anti-diagonal gradient.
float pattern_value(std::size_t id, std::size_t y, std::size_t x,
                    std::size_t image_size);

class SyntheticDataset {
 public:
  explicit SyntheticDataset(const DatasetConfig& cfg);

  std::size_t size() const { return images_.size(); }
  const Tensor& image(std::size_t i) const { return images_.at(i); }
  std::size_t label(std::size_t i) const { return labels_.at(i); }
  const DatasetConfig& config() const { return cfg_; }

 private:
  DatasetConfig cfg_;
  std::vector<Tensor> images_;
  std::vector<std::size_t> labels_;
};

}  // namespace dvit
