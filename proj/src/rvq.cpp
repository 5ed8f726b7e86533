#include "rvqkit/rvq.hpp"

#include <cmath>
#include <string>

#include "rvqkit/errors.hpp"
#include "rvqkit/parallel.hpp"

namespace rvqkit {

void RvqQuantizer::validate() const {
  require(!layers.empty(), "quantizer needs at least one layer");
  const std::size_t K = layers.front().size();
  const std::size_t q = layers.front().dim();
  for (std::size_t n = 0; n < layers.size(); ++n) {
    layers[n].validate();
    require(layers[n].size() == K && layers[n].dim() == q,
            "layer " + std::to_string(n) + " differs in K or q from layer 0");
    require(layers[n].metric == layers.front().metric, "all layers must share one metric");
  }
  if (scheme == Scheme::plain) {
    require(q == latent_dim, "plain scheme requires q == d");
    require(projections.empty(), "plain scheme carries no projections");
  } else {
    require(projections.size() == layers.size(), "projected scheme needs one projection per layer");
    for (const auto& p : projections) {
      p.validate();
      require(p.latent_dim() == latent_dim && p.quant_dim() == q,
              "projection shape does not match d x q");
    }
  }
}

namespace {

void check_latent(VectorRef latent, const RvqQuantizer& quantizer) {
  if (static_cast<std::size_t>(latent.size()) != quantizer.latent_dim) {
    throw ContractViolation("latent dimension " + std::to_string(latent.size()) +
                            " does not match quantizer dimension " +
                            std::to_string(quantizer.latent_dim));
  }
}

bool latent_residual(const RvqQuantizer& quantizer) {
  return quantizer.scheme == Scheme::projected &&
         quantizer.residual_space == ResidualSpace::latent;
}

}  // namespace

EncodeResult rvq_encode(VectorRef latent, const RvqQuantizer& quantizer) {
  check_latent(latent, quantizer);
  EncodeResult result;
  result.frame.codes.reserve(quantizer.num_layers());
  result.trace.residual_norms.reserve(quantizer.num_layers());

  if (latent_residual(quantizer)) {
    Vector residual = latent;
    for (std::size_t n = 0; n < quantizer.num_layers(); ++n) {
      const auto& proj = quantizer.projections[n];
      VqAssignment a =
          nearest_code(project_in(residual, proj), quantizer.layers[n], ZeroQuery::first_code);
      residual -= project_out(a.quantized, proj);
      result.frame.codes.push_back(static_cast<Code>(a.index));
      result.trace.residual_norms.push_back(residual.norm());
      result.trace.assignments.push_back(std::move(a));
    }
    result.trace.final_residual = std::move(residual);
    return result;
  }

  Vector residual = quantizer.scheme == Scheme::projected
                        ? project_in(latent, quantizer.projections.front())
                        : Vector(latent);
  for (std::size_t n = 0; n < quantizer.num_layers(); ++n) {
    VqAssignment a = nearest_code(residual, quantizer.layers[n], ZeroQuery::first_code);
    residual -= a.quantized;
    result.frame.codes.push_back(static_cast<Code>(a.index));
    result.trace.residual_norms.push_back(residual.norm());
    result.trace.assignments.push_back(std::move(a));
  }
  result.trace.final_residual = std::move(residual);
  return result;
}

TokenFrame rvq_encode_frame(VectorRef latent, const RvqQuantizer& quantizer) {
  return rvq_encode(latent, quantizer).frame;
}

Vector rvq_decode(const TokenFrame& frame, const RvqQuantizer& quantizer,
                  std::optional<std::size_t> num_layers) {
  require(frame.codes.size() == quantizer.num_layers(),
          "frame has " + std::to_string(frame.codes.size()) + " codes, quantizer has " +
              std::to_string(quantizer.num_layers()) + " layers");
  const std::size_t m = num_layers.value_or(quantizer.num_layers());
  require(m <= quantizer.num_layers(), "cannot decode more layers than the quantizer has");
  const std::size_t K = quantizer.codebook_size();
  for (std::size_t n = 0; n < frame.codes.size(); ++n) {
    const Code c = frame.codes[n];
    if (c < 0 || static_cast<std::size_t>(c) >= K) {
      throw ContractViolation("code " + std::to_string(c) + " at layer " + std::to_string(n) +
                              " outside [0, " + std::to_string(K) + ")");
    }
  }

  Vector out = Vector::Zero(static_cast<Eigen::Index>(quantizer.latent_dim));
  for (std::size_t n = 0; n < m; ++n) {
    const auto entry = quantizer.layers[n].entries.row(frame.codes[n]).transpose();
    if (quantizer.scheme == Scheme::projected) {
      out += project_out(entry, quantizer.projections[n]);
    } else {
      out += entry;
    }
  }
  return out;
}

std::vector<TokenFrame> rvq_encode_batch(const Matrix& latents, const RvqQuantizer& quantizer,
                                         unsigned threads) {
  std::vector<TokenFrame> frames(static_cast<std::size_t>(latents.rows()));
  parallel_for(frames.size(), threads, [&](std::size_t i) {
    frames[i] = rvq_encode_frame(latents.row(static_cast<Eigen::Index>(i)).transpose(), quantizer);
  });
  return frames;
}

double reconstruction_mse(const Matrix& latents, const RvqQuantizer& quantizer, unsigned threads,
                          std::optional<std::size_t> num_layers) {
  if (latents.rows() == 0) return 0.0;
  const auto n = static_cast<std::size_t>(latents.rows());
  std::vector<double> err(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto row = latents.row(static_cast<Eigen::Index>(i)).transpose();
    const TokenFrame f = rvq_encode_frame(row, quantizer);
    err[i] = (row - rvq_decode(f, quantizer, num_layers)).squaredNorm();
  });
  double total = 0.0;
  for (double e : err) total += e;
  return total / (static_cast<double>(n) * static_cast<double>(quantizer.latent_dim));
}

double bits_per_code(std::size_t codebook_size) {
  require(codebook_size >= 1, "codebook size must be >= 1");
  return std::ceil(std::log2(static_cast<double>(codebook_size)));
}

double bitrate_bps(std::size_t num_layers, std::size_t codebook_size, double token_rate_hz) {
  return static_cast<double>(num_layers) * bits_per_code(codebook_size) * token_rate_hz;
}

double bitrate_bps(const RvqQuantizer& quantizer, double token_rate_hz) {
  return bitrate_bps(quantizer.num_layers(), quantizer.codebook_size(), token_rate_hz);
}

}  // namespace rvqkit
