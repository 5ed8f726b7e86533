#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace rvqkit {

using Code = std::int32_t;

// Code indices of one frame, layer-major: codes[n] belongs to layer n.
struct TokenFrame {
  std::vector<Code> codes;

  bool operator==(const TokenFrame&) const = default;
};

struct TokenStream {
  std::string source_id;
  double token_rate_hz = 50.0;
  std::size_t layers = 0;
  std::size_t codebook_size = 0;
  std::vector<TokenFrame> frames;

  std::size_t num_frames() const { return frames.size(); }

  // Codes of one layer across all frames.
  std::vector<Code> layer_codes(std::size_t layer) const;

  // Throws ContractViolation on ragged frames, out-of-range codes or a
  // non-positive token rate.
  void validate() const;

  bool operator==(const TokenStream&) const = default;
};

}  // namespace rvqkit
