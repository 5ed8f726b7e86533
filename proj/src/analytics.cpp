#include "rvqkit/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rvqkit/errors.hpp"

namespace rvqkit {

const LayerUtilization& UtilizationReport::layer(std::size_t index) const {
  for (const auto& l : layers) {
    if (l.layer == index) return l;
  }
  throw ContractViolation("layer " + std::to_string(index) + " not present in report");
}

LayerUtilization summarize_counts(std::size_t layer, std::vector<std::uint64_t> counts) {
  LayerUtilization out;
  out.layer = layer;
  std::uint64_t total = 0;
  for (auto c : counts) {
    total += c;
    if (c > 0) ++out.used_codes;
  }
  if (!counts.empty()) {
    out.utilization_fraction =
        static_cast<double>(out.used_codes) / static_cast<double>(counts.size());
  }
  double h = 0.0;
  if (total > 0) {
    const double n = static_cast<double>(total);
    for (auto c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / n;
      h -= p * std::log2(p);
    }
  }
  // A single code gives -1 * log2(1) = -0; keep the report at +0.
  out.entropy_bits = h > 0.0 ? h : 0.0;
  out.perplexity = std::exp2(out.entropy_bits);
  out.counts = std::move(counts);
  return out;
}

namespace {

void check_compatible(std::span<const TokenStream> streams) {
  if (streams.empty()) return;
  const auto& first = streams.front();
  for (const auto& s : streams) {
    if (s.codebook_size != first.codebook_size) {
      throw FormatError("mixed codebook_size across streams: '" + first.source_id + "' has " +
                        std::to_string(first.codebook_size) + ", '" + s.source_id + "' has " +
                        std::to_string(s.codebook_size));
    }
    if (s.layers != first.layers) {
      throw FormatError("mixed layer counts across streams: '" + first.source_id + "' has " +
                        std::to_string(first.layers) + ", '" + s.source_id + "' has " +
                        std::to_string(s.layers));
    }
    s.validate();
  }
}

UtilizationReport count_layers(std::span<const TokenStream> streams, std::size_t first,
                               std::size_t last) {
  UtilizationReport report;
  if (streams.empty()) return report;
  report.codebook_size = streams.front().codebook_size;
  for (const auto& s : streams) report.total_frames += s.frames.size();
  for (std::size_t layer = first; layer < last; ++layer) {
    std::vector<std::uint64_t> counts(report.codebook_size, 0);
    for (const auto& s : streams) {
      for (const auto& f : s.frames) ++counts[static_cast<std::size_t>(f.codes[layer])];
    }
    report.layers.push_back(summarize_counts(layer, std::move(counts)));
  }
  return report;
}

}  // namespace

UtilizationReport utilization(std::span<const TokenStream> streams, std::size_t layer) {
  check_compatible(streams);
  if (!streams.empty()) {
    require(layer < streams.front().layers,
            "layer " + std::to_string(layer) + " out of range for " +
                std::to_string(streams.front().layers) + "-layer streams");
  }
  return count_layers(streams, layer, layer + 1);
}

UtilizationReport utilization(std::span<const TokenStream> streams) {
  check_compatible(streams);
  if (streams.empty()) return {};
  return count_layers(streams, 0, streams.front().layers);
}

std::vector<RankCount> rank_frequency(const UtilizationReport& report, std::size_t layer) {
  const auto& counts = report.layer(layer).counts;
  std::vector<std::size_t> order(counts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<RankCount> out;
  out.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    out.push_back({r + 1, counts[order[r]], order[r]});
  }
  return out;
}

}  // namespace rvqkit
