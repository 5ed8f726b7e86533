#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "rvqkit/tokens.hpp"
#include "rvqkit/vq_core.hpp"

namespace rvqkit {

enum class Scheme : std::uint8_t { plain = 0, projected = 1 };

// Where the projected scheme keeps its running residual.
//  quantization: project the latent once with the first layer's proj_in and
//    subtract looked-up q-space entries layer by layer.
//  latent: each layer projects the latent-space residual with its own
//    proj_in and the residual is updated with proj_out(entry).
// For the plain scheme both are the same recursion.
enum class ResidualSpace : std::uint8_t { quantization, latent };

struct RvqQuantizer {
  std::vector<Codebook> layers;
  std::size_t latent_dim = 0;
  Scheme scheme = Scheme::plain;
  std::vector<ProjectionPair> projections;  // one per layer when projected
  ResidualSpace residual_space = ResidualSpace::quantization;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t codebook_size() const { return layers.empty() ? 0 : layers.front().size(); }
  std::size_t quant_dim() const { return layers.empty() ? 0 : layers.front().dim(); }
  Metric metric() const { return layers.front().metric; }

  void validate() const;
};

struct EncodeTrace {
  // residual_norms[n] is the residual norm after layer n has been subtracted.
  std::vector<double> residual_norms;
  std::vector<VqAssignment> assignments;
  // Residual left after the last layer (quantization space for the
  // quantization-residual projected scheme, latent space otherwise).
  Vector final_residual;
};

struct EncodeResult {
  TokenFrame frame;
  EncodeTrace trace;
};

EncodeResult rvq_encode(VectorRef latent, const RvqQuantizer& quantizer);

// Codes only; cheaper than rvq_encode when no trace is needed.
TokenFrame rvq_encode_frame(VectorRef latent, const RvqQuantizer& quantizer);

// Sum of per-layer outputs. `num_layers` limits decoding to the first m
// layers (defaults to all).
Vector rvq_decode(const TokenFrame& frame, const RvqQuantizer& quantizer,
                  std::optional<std::size_t> num_layers = std::nullopt);

// Row-wise encode of a corpus; identical at any thread count.
std::vector<TokenFrame> rvq_encode_batch(const Matrix& latents, const RvqQuantizer& quantizer,
                                         unsigned threads = 1);

// Mean over rows of ||x - decode(encode(x))||^2 / d.
double reconstruction_mse(const Matrix& latents, const RvqQuantizer& quantizer,
                          unsigned threads = 1,
                          std::optional<std::size_t> num_layers = std::nullopt);

// Bits per code: log2 K, rounded up to a whole bit when K is not a power of two.
double bits_per_code(std::size_t codebook_size);

double bitrate_bps(const RvqQuantizer& quantizer, double token_rate_hz);
double bitrate_bps(std::size_t num_layers, std::size_t codebook_size, double token_rate_hz);

}  // namespace rvqkit
