#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rvqkit/random.hpp"

namespace rvqkit {

// softmax(logits / temperature), computed with the max subtracted.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

// Draws an index from softmax(logits / temperature) by inverse CDF on one
// uniform draw. When top_k is set, only the top_k largest logits (ties by
// lower index) keep probability mass. Non-finite logits or a non-positive
// temperature are contract violations.
std::size_t sample_with_temperature(std::span<const double> logits, double temperature, Rng& rng,
                                    std::optional<std::size_t> top_k = std::nullopt);

// Same draw, also reporting the probability of the drawn index.
struct Sample {
  std::size_t index = 0;
  double probability = 0.0;
};
Sample sample_categorical(std::span<const double> logits, double temperature, Rng& rng,
                          std::optional<std::size_t> top_k = std::nullopt);

// First index of the maximum.
std::size_t argmax(std::span<const double> values);

}  // namespace rvqkit
