#include "rvqkit/tokens.hpp"

#include "rvqkit/errors.hpp"

namespace rvqkit {

std::vector<Code> TokenStream::layer_codes(std::size_t layer) const {
  require(layer < layers, "layer " + std::to_string(layer) + " out of range for stream '" +
                              source_id + "'");
  std::vector<Code> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.codes[layer]);
  return out;
}

void TokenStream::validate() const {
  require(token_rate_hz > 0.0, "token stream '" + source_id + "': token_rate_hz must be > 0");
  require(layers >= 1, "token stream '" + source_id + "': layers must be >= 1");
  require(codebook_size >= 1, "token stream '" + source_id + "': codebook_size must be >= 1");
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& codes = frames[t].codes;
    require(codes.size() == layers, "token stream '" + source_id + "': frame " +
                                        std::to_string(t) + " has " +
                                        std::to_string(codes.size()) + " codes, expected " +
                                        std::to_string(layers));
    for (Code c : codes) {
      require(c >= 0 && static_cast<std::size_t>(c) < codebook_size,
              "token stream '" + source_id + "': code " + std::to_string(c) + " in frame " +
                  std::to_string(t) + " outside [0, " + std::to_string(codebook_size) + ")");
    }
  }
}

}  // namespace rvqkit
