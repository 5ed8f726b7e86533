#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rvqkit/tokens.hpp"

namespace rvqkit {

struct LayerUtilization {
  std::size_t layer = 0;
  std::vector<std::uint64_t> counts;  // length K
  std::size_t used_codes = 0;
  double utilization_fraction = 0.0;
  double entropy_bits = 0.0;  // empirical, 0 log 0 = 0
  double perplexity = 1.0;    // 2^entropy_bits
};

struct UtilizationReport {
  std::size_t codebook_size = 0;
  std::uint64_t total_frames = 0;
  std::vector<LayerUtilization> layers;

  // Throws ContractViolation when the layer is not part of the report.
  const LayerUtilization& layer(std::size_t index) const;
};

struct RankCount {
  std::size_t rank = 0;  // 1-based
  std::uint64_t count = 0;
  std::size_t code = 0;

  bool operator==(const RankCount&) const = default;
};

// Derives used codes, fraction, entropy and perplexity from raw counts.
LayerUtilization summarize_counts(std::size_t layer, std::vector<std::uint64_t> counts);

// Exact code counts for one layer over every frame of every stream. All
// streams must share codebook size and layer count (FormatError otherwise).
UtilizationReport utilization(std::span<const TokenStream> streams, std::size_t layer);

// Same, for every layer.
UtilizationReport utilization(std::span<const TokenStream> streams);

// Counts sorted descending, ties by code index; zero counts stay at the tail.
std::vector<RankCount> rank_frequency(const UtilizationReport& report, std::size_t layer);

}  // namespace rvqkit
