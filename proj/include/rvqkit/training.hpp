#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rvqkit/rvq.hpp"
#include "rvqkit/vq_core.hpp"

namespace rvqkit {

enum class TrainScheme { ema, ema_restart, projected };
enum class InitMethod { kmeans, random };

const char* to_string(TrainScheme scheme);

struct TrainConfig {
  TrainScheme scheme = TrainScheme::ema;
  std::size_t num_layers = 8;
  std::size_t codebook_size = 1024;
  std::size_t latent_dim = 64;
  std::size_t quant_dim = 8;  // projected only; plain schemes quantize in d
  double decay = 0.99;
  double epsilon = 1e-5;
  double commitment_weight = 0.25;
  double codebook_weight = 1.0;
  double learning_rate = 1e-3;
  std::size_t steps = 1000;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::size_t restart_period = 100;
  std::uint64_t restart_threshold = 1;
  // Lookup metric; unset means euclidean for EMA schemes and cosine for
  // the projected scheme.
  std::optional<Metric> metric;
  // kmeans: k-means on the first max(batch_size, K) sampled vectors.
  // random: N(0, init_scale^2) entries independent of the data.
  InitMethod init = InitMethod::kmeans;
  double init_scale = 1.0;
  std::size_t kmeans_iterations = 10;
  unsigned threads = 1;

  Metric lookup_metric() const;
  void validate() const;
};

struct CorpusSpec {
  enum class Kind { gaussian_mixture, file };
  Kind kind = Kind::gaussian_mixture;
  std::size_t num_components = 8;
  std::size_t dims = 16;
  double separation = 4.0;
  std::size_t count = 10000;
  std::uint64_t seed = 0;
  std::string path;

  void validate() const;
};

struct TrainReport {
  std::vector<double> mse;              // per step, on the step's batch before the update
  std::vector<double> codebook_loss;    // per step; zero for EMA schemes
  std::vector<double> commitment_loss;  // per step
  std::vector<double> total_loss;       // per step
  std::vector<std::size_t> used_codes;  // per layer, full corpus, final quantizer
  std::vector<double> utilization;      // per layer, used_codes / K
  double final_mse = 0.0;               // full corpus, final quantizer
  std::size_t codes_restarted = 0;
  double wall_clock_seconds = 0.0;
};

struct TrainResult {
  RvqQuantizer quantizer;
  TrainReport report;
};

// Mixture components have means drawn uniformly from
// [-separation, separation]^dims and unit variance. File corpora are read in
// the RVQV vector format.
Matrix make_corpus(const CorpusSpec& spec);

TrainResult train_quantizer(const Matrix& corpus, const TrainConfig& config);

// Training-time quantization: the forward value is the quantized vector and
// the Jacobian with respect to the latent is the identity.
struct StraightThrough {
  Vector value;

  Vector backward(VectorRef grad_value) const { return grad_value; }
};

StraightThrough straight_through(VectorRef latent, VectorRef quantized);

// --- projected scheme internals, exposed for gradient checking ---

// Tied projections shared by all layers plus per-layer code entries.
struct ProjectedParams {
  Matrix proj_in;               // d x q
  Matrix proj_out;              // q x d
  std::vector<Matrix> entries;  // N of K x q
};

struct ProjectedLossWeights {
  double codebook = 1.0;
  double commitment = 0.25;
};

// assignments[i][n] = code chosen at layer n for batch row i.
using LayerAssignments = std::vector<std::vector<std::size_t>>;

struct ProjectedLoss {
  double total = 0.0;
  double mse = 0.0;         // mean ||x_hat - x||^2 / d
  double codebook = 0.0;    // mean over rows of sum_n ||r_n - e_n||^2
  double commitment = 0.0;  // same value, encoder-side
  ProjectedParams grad;     // gradient of total w.r.t. every parameter
};

// Greedy residual assignment in quantization space for every batch row.
LayerAssignments projected_assign(const ProjectedParams& params, const Matrix& batch,
                                  Metric metric, unsigned threads = 1);

// Batch-mean loss and its straight-through gradient for fixed assignments.
// Per row, with z = proj_in^T x and r_1 = z:
//   r_n = z - sum_{i<n} sg(e_i)
//   x_hat = proj_out^T (z + sg(sum_n e_n - z))
//   loss = ||x_hat - x||^2 / d
//        + w_cb * sum_n ||sg(r_n) - e_n||^2 + w_commit * sum_n ||r_n - sg(e_n)||^2
ProjectedLoss projected_loss_and_gradient(const ProjectedParams& params, const Matrix& batch,
                                          const LayerAssignments& assignments,
                                          const ProjectedLossWeights& weights);

}  // namespace rvqkit
