#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace rvqkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorRef = Eigen::Ref<const Vector>;

enum class Metric : std::uint8_t { euclidean = 0, cosine = 1 };

const char* to_string(Metric metric);

// One quantization layer: K code vectors of dimension q plus the running
// statistics used by the EMA update.
struct Codebook {
  Matrix entries;                          // K x q
  Vector ema_cluster_size;                 // K, non-negative
  Matrix ema_embed_sum;                    // K x q
  std::vector<std::uint64_t> usage_counts; // assignments since last restart window
  Metric metric = Metric::euclidean;

  Codebook() = default;

  // EMA statistics start at (1, entry) so that entries are a fixed point
  // of an update with no assignments.
  Codebook(Matrix code_vectors, Metric lookup_metric);

  std::size_t size() const { return static_cast<std::size_t>(entries.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(entries.cols()); }

  std::uint64_t total_usage() const;

  // Throws ContractViolation when shapes disagree or values are non-finite.
  void validate() const;
};

// Linear maps between latent space (d) and quantization space (q).
// project_in(x) = proj_in^T x, project_out(y) = proj_out^T y.
struct ProjectionPair {
  Matrix proj_in;   // d x q
  Matrix proj_out;  // q x d

  static ProjectionPair identity(std::size_t dim);

  std::size_t latent_dim() const { return static_cast<std::size_t>(proj_in.rows()); }
  std::size_t quant_dim() const { return static_cast<std::size_t>(proj_in.cols()); }

  void validate() const;
};

struct VqAssignment {
  std::size_t index = 0;
  Vector quantized;
  double distance = 0.0;
};

struct BatchAssignment {
  std::vector<std::size_t> indices;
  std::vector<double> distances;
};

// What a cosine lookup does with a zero-norm query. `reject` throws
// DegenerateInput; `first_code` treats every cosine as 0 and returns code 0
// at distance 1 (what normalizing with an epsilon would do). Residual
// recursions use `first_code` since an exact hit leaves a zero residual.
enum class ZeroQuery : std::uint8_t { reject, first_code };

// Exhaustive lookup. Euclidean distance is the L2 norm of the difference;
// cosine distance is 1 - cos(query, entry). Ties go to the lowest index.
VqAssignment nearest_code(VectorRef query, const Codebook& codebook,
                          ZeroQuery zero_query = ZeroQuery::reject);

// Row-wise nearest_code over a batch (rows are queries). Entry norms are
// computed once per call.
BatchAssignment assign_batch(const Matrix& queries, const Codebook& codebook,
                             unsigned threads = 1, ZeroQuery zero_query = ZeroQuery::reject);

// Standard VQ-VAE EMA step with Laplace-smoothed cluster sizes.
// indices[i] is the code assigned to queries.row(i).
void ema_update(Codebook& codebook, const Matrix& queries,
                std::span<const std::size_t> indices, double decay,
                double epsilon = 1e-5);

// Replaces every code whose usage in the current window is below
// `threshold` with a uniformly sampled batch row, resets that code's EMA
// statistics to (1, entry), and starts a new usage window for all codes.
// Returns the number of replaced codes.
std::size_t restart_dead_codes(Codebook& codebook, const Matrix& batch,
                               std::uint64_t threshold, std::uint64_t seed);

Vector project_in(VectorRef x, const ProjectionPair& pair);
Vector project_out(VectorRef y, const ProjectionPair& pair);

// ||quantized - latent||^2. The two names carry the same value; they differ
// in which side receives the gradient during training.
double codebook_loss(VectorRef latent, VectorRef quantized);
double commitment_loss(VectorRef latent, VectorRef quantized);

double snake(double x, double alpha = 1.0);
Vector snake(VectorRef x, double alpha = 1.0);

// k-means++ seeding followed by `iterations` Lloyd steps (Euclidean).
// EMA statistics are set to each cluster's (size, sum).
Codebook kmeans_init(const Matrix& data, std::size_t num_codes, std::size_t iterations,
                     std::uint64_t seed, Metric metric = Metric::euclidean);

}  // namespace rvqkit
