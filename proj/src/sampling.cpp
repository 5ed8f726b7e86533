#include "rvqkit/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rvqkit/errors.hpp"

namespace rvqkit {

namespace {

void check_logits(std::span<const double> logits) {
  require(!logits.empty(), "logits must be non-empty");
  for (double v : logits) require(std::isfinite(v), "logits must be finite");
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  check_logits(logits);
  require(temperature > 0.0, "temperature must be positive");
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - hi) / temperature);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

Sample sample_categorical(std::span<const double> logits, double temperature, Rng& rng,
                          std::optional<std::size_t> top_k) {
  std::vector<double> p = softmax(logits, temperature);
  if (top_k && *top_k < p.size()) {
    require(*top_k >= 1, "top_k must be >= 1");
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    double kept = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (r < *top_k) {
        kept += p[order[r]];
      } else {
        p[order[r]] = 0.0;
      }
    }
    for (double& v : p) v /= kept;
  }

  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last_positive = i;
    acc += p[i];
    if (u < acc) return {i, p[i]};
  }
  // Rounding left acc slightly below 1.
  return {last_positive, p[last_positive]};
}

std::size_t sample_with_temperature(std::span<const double> logits, double temperature, Rng& rng,
                                    std::optional<std::size_t> top_k) {
  return sample_categorical(logits, temperature, rng, top_k).index;
}

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), "argmax of an empty range");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace rvqkit
