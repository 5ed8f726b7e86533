#include "rvqkit/vq_core.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rvqkit/errors.hpp"
#include "rvqkit/parallel.hpp"
#include "rvqkit/random.hpp"

namespace rvqkit {

double Rng::normal() {
  // 1 - uniform() lies in (0, 1], keeping the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

const char* to_string(Metric metric) {
  return metric == Metric::cosine ? "cosine" : "euclidean";
}

Codebook::Codebook(Matrix code_vectors, Metric lookup_metric)
    : entries(std::move(code_vectors)),
      ema_cluster_size(Vector::Ones(entries.rows())),
      ema_embed_sum(entries),
      usage_counts(static_cast<std::size_t>(entries.rows()), 0),
      metric(lookup_metric) {
  validate();
}

std::uint64_t Codebook::total_usage() const {
  std::uint64_t total = 0;
  for (auto c : usage_counts) total += c;
  return total;
}

void Codebook::validate() const {
  require(entries.rows() >= 1 && entries.cols() >= 1, "codebook must have K >= 1 and q >= 1");
  require(entries.allFinite(), "codebook entries must be finite");
  require(ema_cluster_size.size() == entries.rows(), "ema_cluster_size length must equal K");
  require(ema_embed_sum.rows() == entries.rows() && ema_embed_sum.cols() == entries.cols(),
          "ema_embed_sum must be K x q");
  require(usage_counts.size() == size(), "usage_counts length must equal K");
  require((ema_cluster_size.array() >= 0.0).all(), "ema_cluster_size must be non-negative");
}

ProjectionPair ProjectionPair::identity(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Matrix::Identity(n, n), Matrix::Identity(n, n)};
}

void ProjectionPair::validate() const {
  require(proj_in.rows() >= 1 && proj_in.cols() >= 1, "projection must be non-empty");
  require(proj_out.rows() == proj_in.cols() && proj_out.cols() == proj_in.rows(),
          "proj_out must be q x d when proj_in is d x q");
  require(proj_in.rows() >= proj_in.cols(), "projected quantization requires d >= q");
  require(proj_in.allFinite() && proj_out.allFinite(), "projection entries must be finite");
}

namespace {

void check_query(VectorRef query, const Codebook& codebook) {
  if (static_cast<std::size_t>(query.size()) != codebook.dim()) {
    throw ContractViolation("query dimension " + std::to_string(query.size()) +
                            " does not match codebook dimension " +
                            std::to_string(codebook.dim()));
  }
}

Vector entry_norms(const Codebook& codebook) {
  Vector norms = codebook.entries.rowwise().norm();
  if (codebook.metric == Metric::cosine) {
    for (Eigen::Index k = 0; k < norms.size(); ++k) {
      if (!(norms[k] > 0.0)) {
        throw DegenerateInput("codebook entry " + std::to_string(k) +
                              " has zero norm under the cosine metric");
      }
    }
  }
  return norms;
}

struct Best {
  std::size_t index;
  double distance;
};

Best best_code(VectorRef query, const Codebook& codebook, const Vector& norms,
               ZeroQuery zero_query) {
  const auto K = static_cast<Eigen::Index>(codebook.size());
  Best best{0, std::numeric_limits<double>::infinity()};
  if (codebook.metric == Metric::euclidean) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double d2 = (codebook.entries.row(k).transpose() - query).squaredNorm();
      if (d2 < best.distance) best = {static_cast<std::size_t>(k), d2};
    }
    best.distance = std::sqrt(best.distance);
    return best;
  }
  const double qnorm = query.norm();
  if (!(qnorm > 0.0)) {
    if (zero_query == ZeroQuery::first_code && qnorm == 0.0) return {0, 1.0};
    throw DegenerateInput("zero-norm query under the cosine metric");
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    const double cos = codebook.entries.row(k).dot(query) / (norms[k] * qnorm);
    const double dist = 1.0 - cos;
    if (dist < best.distance) best = {static_cast<std::size_t>(k), dist};
  }
  return best;
}

}  // namespace

VqAssignment nearest_code(VectorRef query, const Codebook& codebook, ZeroQuery zero_query) {
  check_query(query, codebook);
  const Vector norms = entry_norms(codebook);
  const Best best = best_code(query, codebook, norms, zero_query);
  return {best.index, codebook.entries.row(static_cast<Eigen::Index>(best.index)).transpose(),
          best.distance};
}

BatchAssignment assign_batch(const Matrix& queries, const Codebook& codebook, unsigned threads,
                             ZeroQuery zero_query) {
  if (queries.rows() > 0 && static_cast<std::size_t>(queries.cols()) != codebook.dim()) {
    throw ContractViolation("batch dimension " + std::to_string(queries.cols()) +
                            " does not match codebook dimension " +
                            std::to_string(codebook.dim()));
  }
  const Vector norms = entry_norms(codebook);
  const auto n = static_cast<std::size_t>(queries.rows());
  BatchAssignment out;
  out.indices.resize(n);
  out.distances.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const Best best =
        best_code(queries.row(static_cast<Eigen::Index>(i)).transpose(), codebook, norms, zero_query);
    out.indices[i] = best.index;
    out.distances[i] = best.distance;
  });
  return out;
}

void ema_update(Codebook& codebook, const Matrix& queries, std::span<const std::size_t> indices,
                double decay, double epsilon) {
  require(queries.rows() > 0, "ema_update needs a non-empty batch");
  require(static_cast<std::size_t>(queries.rows()) == indices.size(),
          "ema_update: one index per query row");
  require(static_cast<std::size_t>(queries.cols()) == codebook.dim(),
          "ema_update: batch dimension does not match codebook");
  require(decay >= 0.0 && decay < 1.0, "ema_update: decay must lie in [0, 1)");
  require(epsilon > 0.0, "ema_update: epsilon must be positive");

  const auto K = static_cast<Eigen::Index>(codebook.size());
  Vector counts = Vector::Zero(K);
  Matrix sums = Matrix::Zero(K, codebook.entries.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t k = indices[i];
    if (k >= codebook.size()) {
      throw ContractViolation("ema_update: index " + std::to_string(k) + " out of range [0, " +
                              std::to_string(codebook.size()) + ")");
    }
    counts[static_cast<Eigen::Index>(k)] += 1.0;
    sums.row(static_cast<Eigen::Index>(k)) += queries.row(static_cast<Eigen::Index>(i));
  }

  codebook.ema_cluster_size = decay * codebook.ema_cluster_size + (1.0 - decay) * counts;
  codebook.ema_embed_sum = decay * codebook.ema_embed_sum + (1.0 - decay) * sums;

  // Laplace smoothing: (n_i + eps) / (N + K eps) * N.
  const double total = codebook.ema_cluster_size.sum();
  const Vector smoothed = (codebook.ema_cluster_size.array() + epsilon) /
                          (total + static_cast<double>(K) * epsilon) * total;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (smoothed[k] > 0.0) {
      codebook.entries.row(k) = codebook.ema_embed_sum.row(k) / smoothed[k];
    }
    codebook.usage_counts[static_cast<std::size_t>(k)] +=
        static_cast<std::uint64_t>(counts[k]);
  }
}

std::size_t restart_dead_codes(Codebook& codebook, const Matrix& batch, std::uint64_t threshold,
                               std::uint64_t seed) {
  require(batch.rows() > 0, "restart_dead_codes needs a non-empty batch");
  require(static_cast<std::size_t>(batch.cols()) == codebook.dim(),
          "restart_dead_codes: batch dimension does not match codebook");
  Rng rng(seed);
  std::size_t restarted = 0;
  for (std::size_t k = 0; k < codebook.size(); ++k) {
    if (codebook.usage_counts[k] >= threshold) continue;
    const auto row = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(batch.rows())));
    const auto kk = static_cast<Eigen::Index>(k);
    codebook.entries.row(kk) = batch.row(row);
    codebook.ema_embed_sum.row(kk) = batch.row(row);
    codebook.ema_cluster_size[kk] = 1.0;
    ++restarted;
  }
  std::fill(codebook.usage_counts.begin(), codebook.usage_counts.end(), 0);
  return restarted;
}

Vector project_in(VectorRef x, const ProjectionPair& pair) {
  if (x.size() != pair.proj_in.rows()) {
    throw ContractViolation("project_in: input has dimension " + std::to_string(x.size()) +
                            ", expected " + std::to_string(pair.proj_in.rows()));
  }
  return pair.proj_in.transpose() * x;
}

Vector project_out(VectorRef y, const ProjectionPair& pair) {
  if (y.size() != pair.proj_out.rows()) {
    throw ContractViolation("project_out: input has dimension " + std::to_string(y.size()) +
                            ", expected " + std::to_string(pair.proj_out.rows()));
  }
  return pair.proj_out.transpose() * y;
}

double codebook_loss(VectorRef latent, VectorRef quantized) {
  require(latent.size() == quantized.size(), "codebook_loss: dimension mismatch");
  return (quantized - latent).squaredNorm();
}

double commitment_loss(VectorRef latent, VectorRef quantized) {
  require(latent.size() == quantized.size(), "commitment_loss: dimension mismatch");
  return (latent - quantized).squaredNorm();
}

double snake(double x, double alpha) {
  require(alpha > 0.0, "snake: alpha must be positive");
  const double s = std::sin(alpha * x);
  return x + s * s / alpha;
}

Vector snake(VectorRef x, double alpha) {
  require(alpha > 0.0, "snake: alpha must be positive");
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = snake(x[i], alpha);
  return out;
}

Codebook kmeans_init(const Matrix& data, std::size_t num_codes, std::size_t iterations,
                     std::uint64_t seed, Metric metric) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (num_codes == 0) throw ContractViolation("kmeans_init: K must be >= 1");
  if (n < num_codes) {
    throw ContractViolation("kmeans_init: " + std::to_string(n) +
                            " data vectors cannot seed " + std::to_string(num_codes) + " codes");
  }
  const auto K = static_cast<Eigen::Index>(num_codes);
  const auto q = data.cols();
  Rng rng(seed);

  // k-means++ seeding.
  Matrix centroids(K, q);
  Vector min_d2 = Vector::Constant(static_cast<Eigen::Index>(n),
                                   std::numeric_limits<double>::infinity());
  auto take = [&](Eigen::Index c, std::size_t row) {
    centroids.row(c) = data.row(static_cast<Eigen::Index>(row));
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = (data.row(static_cast<Eigen::Index>(i)) - centroids.row(c)).squaredNorm();
      min_d2[static_cast<Eigen::Index>(i)] = std::min(min_d2[static_cast<Eigen::Index>(i)], d2);
    }
  };
  take(0, rng.below(n));
  for (Eigen::Index c = 1; c < K; ++c) {
    const double total = min_d2.sum();
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += min_d2[static_cast<Eigen::Index>(i)];
        if (acc > target) {
          pick = i;
          break;
        }
      }
      // Guard against rounding landing on an already-chosen point.
      while (min_d2[static_cast<Eigen::Index>(pick)] == 0.0 && pick > 0) --pick;
    } else {
      pick = rng.below(n);
    }
    take(c, pick);
  }

  Codebook seeded(centroids, Metric::euclidean);
  std::vector<std::size_t> assign(n);
  for (std::size_t it = 0; it <= iterations; ++it) {
    assign = assign_batch(data, seeded).indices;
    if (it == iterations) break;
    Matrix sums = Matrix::Zero(K, q);
    Vector counts = Vector::Zero(K);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assign[i])) += data.row(static_cast<Eigen::Index>(i));
      counts[static_cast<Eigen::Index>(assign[i])] += 1.0;
    }
    for (Eigen::Index c = 0; c < K; ++c) {
      if (counts[c] > 0.0) seeded.entries.row(c) = sums.row(c) / counts[c];
    }
  }

  Codebook out(seeded.entries, metric);
  out.ema_cluster_size.setZero();
  out.ema_embed_sum.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(assign[i]);
    out.ema_cluster_size[c] += 1.0;
    out.ema_embed_sum.row(c) += data.row(static_cast<Eigen::Index>(i));
  }
  // Empty clusters keep their centroid as a (1, entry) fixed point.
  for (Eigen::Index c = 0; c < K; ++c) {
    if (out.ema_cluster_size[c] == 0.0) {
      out.ema_cluster_size[c] = 1.0;
      out.ema_embed_sum.row(c) = out.entries.row(c);
    }
  }
  return out;
}

}  // namespace rvqkit
