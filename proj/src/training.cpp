#include "rvqkit/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "rvqkit/analytics.hpp"
#include "rvqkit/errors.hpp"
#include "rvqkit/io.hpp"
#include "rvqkit/parallel.hpp"
#include "rvqkit/random.hpp"

namespace rvqkit {

const char* to_string(TrainScheme scheme) {
  switch (scheme) {
    case TrainScheme::ema: return "ema";
    case TrainScheme::ema_restart: return "ema-restart";
    case TrainScheme::projected: return "projected";
  }
  return "unknown";
}

Metric TrainConfig::lookup_metric() const {
  if (metric) return *metric;
  return scheme == TrainScheme::projected ? Metric::cosine : Metric::euclidean;
}

void TrainConfig::validate() const {
  require(num_layers >= 1, "num_layers must be >= 1");
  require(codebook_size >= 1, "codebook_size must be >= 1");
  require(latent_dim >= 1, "latent_dim must be >= 1");
  require(steps >= 1, "steps must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(decay >= 0.0 && decay < 1.0, "decay must lie in [0, 1)");
  require(epsilon > 0.0, "epsilon must be positive");
  require(commitment_weight >= 0.0 && codebook_weight >= 0.0, "loss weights must be >= 0");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(init_scale > 0.0, "init_scale must be positive");
  if (scheme == TrainScheme::projected) {
    require(quant_dim >= 1 && quant_dim <= latent_dim, "projected scheme requires 1 <= q <= d");
  }
  if (scheme == TrainScheme::ema_restart) require(restart_period >= 1, "restart_period must be >= 1");
}

void CorpusSpec::validate() const {
  if (kind == Kind::file) {
    require(!path.empty(), "file corpus needs a path");
    return;
  }
  require(num_components >= 1, "mixture needs at least one component");
  require(dims >= 1, "corpus dims must be >= 1");
  require(separation > 0.0, "mixture separation must be positive");
}

Matrix make_corpus(const CorpusSpec& spec) {
  spec.validate();
  if (spec.kind == CorpusSpec::Kind::file) return io::read_vector_file(spec.path);

  const auto dims = static_cast<Eigen::Index>(spec.dims);
  Rng rng(mix_seed(spec.seed, 0));
  Matrix means(static_cast<Eigen::Index>(spec.num_components), dims);
  for (Eigen::Index c = 0; c < means.rows(); ++c)
    for (Eigen::Index j = 0; j < dims; ++j)
      means(c, j) = spec.separation * (2.0 * rng.uniform() - 1.0);

  Matrix out(static_cast<Eigen::Index>(spec.count), dims);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto c = static_cast<Eigen::Index>(rng.below(spec.num_components));
    for (Eigen::Index j = 0; j < dims; ++j) out(i, j) = means(c, j) + rng.normal();
  }
  return out;
}

StraightThrough straight_through(VectorRef latent, VectorRef quantized) {
  require(latent.size() == quantized.size(), "straight_through: dimension mismatch");
  return {Vector(quantized)};
}

LayerAssignments projected_assign(const ProjectedParams& params, const Matrix& batch,
                                  Metric metric, unsigned threads) {
  Matrix residual = batch * params.proj_in;
  const auto rows = static_cast<std::size_t>(batch.rows());
  LayerAssignments out(rows, std::vector<std::size_t>(params.entries.size()));
  for (std::size_t n = 0; n < params.entries.size(); ++n) {
    const Codebook layer(params.entries[n], metric);
    const BatchAssignment a = assign_batch(residual, layer, threads, ZeroQuery::first_code);
    for (std::size_t i = 0; i < rows; ++i) {
      out[i][n] = a.indices[i];
      residual.row(static_cast<Eigen::Index>(i)) -=
          params.entries[n].row(static_cast<Eigen::Index>(a.indices[i]));
    }
  }
  return out;
}

ProjectedLoss projected_loss_and_gradient(const ProjectedParams& params, const Matrix& batch,
                                          const LayerAssignments& assignments,
                                          const ProjectedLossWeights& weights) {
  const Eigen::Index d = params.proj_in.rows();
  const Eigen::Index q = params.proj_in.cols();
  const std::size_t layers = params.entries.size();
  require(batch.rows() > 0, "projected loss needs a non-empty batch");
  require(batch.cols() == d, "batch dimension does not match proj_in");
  require(params.proj_out.rows() == q && params.proj_out.cols() == d, "proj_out must be q x d");
  require(assignments.size() == static_cast<std::size_t>(batch.rows()),
          "one assignment row per batch row");

  ProjectedLoss out;
  out.grad.proj_in = Matrix::Zero(d, q);
  out.grad.proj_out = Matrix::Zero(q, d);
  for (const auto& e : params.entries) out.grad.entries.push_back(Matrix::Zero(e.rows(), e.cols()));

  const double inv_b = 1.0 / static_cast<double>(batch.rows());
  const double inv_d = 1.0 / static_cast<double>(d);
  double sq_err = 0.0;
  double vq_err = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const Vector x = batch.row(i).transpose();
    const Vector z = params.proj_in.transpose() * x;
    const auto& codes = assignments[static_cast<std::size_t>(i)];
    require(codes.size() == layers, "assignment row has the wrong number of layers");

    Vector residual = z;
    Vector quantized = Vector::Zero(q);
    Vector grad_z = Vector::Zero(q);
    for (std::size_t n = 0; n < layers; ++n) {
      const auto k = static_cast<Eigen::Index>(codes[n]);
      require(k >= 0 && k < params.entries[n].rows(), "assignment out of range");
      const Vector e = params.entries[n].row(k).transpose();
      const Vector diff = residual - e;
      vq_err += diff.squaredNorm();
      // codebook term moves e toward sg(r); commitment moves r (hence z) toward sg(e)
      out.grad.entries[n].row(k) -= (2.0 * weights.codebook * inv_b) * diff.transpose();
      grad_z += (2.0 * weights.commitment * inv_b) * diff;
      residual -= e;
      quantized += e;
    }

    const Vector err = params.proj_out.transpose() * quantized - x;
    sq_err += err.squaredNorm();
    const Vector g = (2.0 * inv_d * inv_b) * err;
    out.grad.proj_out.noalias() += quantized * g.transpose();
    // straight-through: d x_hat / d z = proj_out^T
    grad_z.noalias() += params.proj_out * g;
    out.grad.proj_in.noalias() += x * grad_z.transpose();
  }

  out.mse = sq_err * inv_d * inv_b;
  out.codebook = vq_err * inv_b;
  out.commitment = out.codebook;
  out.total = out.mse + weights.codebook * out.codebook + weights.commitment * out.commitment;
  return out;
}

namespace {

class BatchSampler {
 public:
  BatchSampler(const Matrix& corpus, std::uint64_t seed) : corpus_(corpus), rng_(seed) {}

  Matrix draw(std::size_t n) {
    Matrix b(static_cast<Eigen::Index>(n), corpus_.cols());
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      b.row(i) = corpus_.row(static_cast<Eigen::Index>(rng_.below(
          static_cast<std::uint64_t>(corpus_.rows()))));
    }
    return b;
  }

 private:
  const Matrix& corpus_;
  Rng rng_;
};

// First max(batch_size, K) rows of a seeded permutation of the corpus.
Matrix init_batch(const Matrix& corpus, const TrainConfig& config) {
  const auto rows = static_cast<std::size_t>(corpus.rows());
  const std::size_t n = std::min(rows, std::max(config.batch_size, config.codebook_size));
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(config.seed, 3));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(rows - i);
    std::swap(perm[i], perm[j]);
  }
  Matrix out(static_cast<Eigen::Index>(n), corpus.cols());
  for (std::size_t i = 0; i < n; ++i) {
    out.row(static_cast<Eigen::Index>(i)) = corpus.row(static_cast<Eigen::Index>(perm[i]));
  }
  return out;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

// Per-layer codebooks for inputs `data` (already in quantization space),
// fitted greedily on the residual of the previous layers.
std::vector<Matrix> init_codebooks(Matrix data, const TrainConfig& config) {
  std::vector<Matrix> entries;
  const auto K = static_cast<Eigen::Index>(config.codebook_size);
  Rng rng(mix_seed(config.seed, 2));
  for (std::size_t n = 0; n < config.num_layers; ++n) {
    if (config.init == InitMethod::random) {
      entries.push_back(random_matrix(K, data.cols(), config.init_scale, rng));
      continue;
    }
    Codebook cb = kmeans_init(data, config.codebook_size, config.kmeans_iterations,
                              mix_seed(config.seed, 100 + n));
    const BatchAssignment a = assign_batch(data, cb, config.threads);
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      data.row(i) -= cb.entries.row(static_cast<Eigen::Index>(a.indices[static_cast<std::size_t>(i)]));
    }
    // A centroid of exact hits is the zero vector, which has no direction.
    if (config.lookup_metric() == Metric::cosine) {
      for (Eigen::Index k = 0; k < K; ++k) {
        if (cb.entries.row(k).norm() > 0.0) continue;
        for (Eigen::Index j = 0; j < cb.entries.cols(); ++j)
          cb.entries(k, j) = config.init_scale * rng.normal();
      }
    }
    entries.push_back(std::move(cb.entries));
  }
  return entries;
}

void check_finite(double value, const char* what, std::size_t step) {
  if (!std::isfinite(value)) {
    throw NumericalFailure(std::string("non-finite ") + what + " at step " + std::to_string(step));
  }
}

void train_ema(const Matrix& corpus, const TrainConfig& config, RvqQuantizer& quantizer,
               TrainReport& report) {
  const Metric metric = config.lookup_metric();
  for (auto& e : init_codebooks(init_batch(corpus, config), config)) {
    quantizer.layers.emplace_back(std::move(e), metric);
  }
  const bool restart = config.scheme == TrainScheme::ema_restart;
  const auto d = static_cast<double>(config.latent_dim);
  BatchSampler sampler(corpus, mix_seed(config.seed, 1));
  std::vector<Matrix> layer_inputs(config.num_layers);

  for (std::size_t step = 0; step < config.steps; ++step) {
    Matrix residual = sampler.draw(config.batch_size);
    double vq_err = 0.0;
    for (std::size_t n = 0; n < config.num_layers; ++n) {
      Codebook& layer = quantizer.layers[n];
      const BatchAssignment a = assign_batch(residual, layer, config.threads);
      Matrix looked_up(residual.rows(), residual.cols());
      for (Eigen::Index i = 0; i < residual.rows(); ++i) {
        looked_up.row(i) = layer.entries.row(static_cast<Eigen::Index>(a.indices[static_cast<std::size_t>(i)]));
      }
      ema_update(layer, residual, a.indices, config.decay, config.epsilon);
      if (restart) layer_inputs[n] = residual;
      residual -= looked_up;
      vq_err += residual.squaredNorm();
    }
    const double b = static_cast<double>(config.batch_size);
    const double mse = residual.squaredNorm() / (b * d);
    check_finite(mse, "quantization error", step);
    report.mse.push_back(mse);
    report.codebook_loss.push_back(0.0);
    report.commitment_loss.push_back(vq_err / b);
    report.total_loss.push_back(mse);

    if (restart && (step + 1) % config.restart_period == 0) {
      for (std::size_t n = 0; n < config.num_layers; ++n) {
        report.codes_restarted += restart_dead_codes(
            quantizer.layers[n], layer_inputs[n], config.restart_threshold,
            mix_seed(config.seed, 1'000'000 + step * config.num_layers + n));
      }
    }
  }
}

void train_projected(const Matrix& corpus, const TrainConfig& config, RvqQuantizer& quantizer,
                     TrainReport& report) {
  const Metric metric = config.lookup_metric();
  const auto d = static_cast<Eigen::Index>(config.latent_dim);
  const auto q = static_cast<Eigen::Index>(config.quant_dim);

  ProjectedParams params;
  Rng rng(mix_seed(config.seed, 4));
  params.proj_in = random_matrix(d, q, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  // Least-squares decoder for the initial subspace: (P^T P)^-1 P^T.
  const Matrix gram = params.proj_in.transpose() * params.proj_in;
  params.proj_out = gram.ldlt().solve(params.proj_in.transpose());
  params.entries = init_codebooks(init_batch(corpus, config) * params.proj_in, config);

  const ProjectedLossWeights weights{config.codebook_weight, config.commitment_weight};
  BatchSampler sampler(corpus, mix_seed(config.seed, 1));
  const double lr = config.learning_rate;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const Matrix batch = sampler.draw(config.batch_size);
    const LayerAssignments assignments = projected_assign(params, batch, metric, config.threads);
    const ProjectedLoss loss = projected_loss_and_gradient(params, batch, assignments, weights);
    check_finite(loss.total, "training loss", step);
    report.mse.push_back(loss.mse);
    report.codebook_loss.push_back(loss.codebook);
    report.commitment_loss.push_back(loss.commitment);
    report.total_loss.push_back(loss.total);

    params.proj_in -= lr * loss.grad.proj_in;
    params.proj_out -= lr * loss.grad.proj_out;
    for (std::size_t n = 0; n < params.entries.size(); ++n) {
      params.entries[n] -= lr * loss.grad.entries[n];
    }
  }

  ProjectionPair pair{params.proj_in, params.proj_out};
  for (auto& e : params.entries) {
    quantizer.layers.emplace_back(std::move(e), metric);
    quantizer.projections.push_back(pair);
  }
  if (!pair.proj_in.allFinite() || !pair.proj_out.allFinite()) {
    throw NumericalFailure("projection matrices became non-finite");
  }
}

}  // namespace

TrainResult train_quantizer(const Matrix& corpus, const TrainConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(corpus.cols()) != config.latent_dim) {
    throw ContractViolation("corpus dimension " + std::to_string(corpus.cols()) +
                            " does not match latent_dim " + std::to_string(config.latent_dim));
  }
  if (static_cast<std::size_t>(corpus.rows()) < config.codebook_size) {
    throw ContractViolation("corpus of " + std::to_string(corpus.rows()) +
                            " vectors is smaller than codebook size " +
                            std::to_string(config.codebook_size));
  }
  const auto started = std::chrono::steady_clock::now();

  TrainResult result;
  RvqQuantizer& quantizer = result.quantizer;
  quantizer.latent_dim = config.latent_dim;
  if (config.scheme == TrainScheme::projected) {
    quantizer.scheme = Scheme::projected;
    train_projected(corpus, config, quantizer, result.report);
  } else {
    quantizer.scheme = Scheme::plain;
    train_ema(corpus, config, quantizer, result.report);
  }
  quantizer.validate();

  TokenStream encoded;
  encoded.source_id = "train-corpus";
  encoded.layers = config.num_layers;
  encoded.codebook_size = config.codebook_size;
  encoded.frames = rvq_encode_batch(corpus, quantizer, config.threads);
  const UtilizationReport usage = utilization(std::span<const TokenStream>(&encoded, 1));
  for (const auto& layer : usage.layers) {
    result.report.used_codes.push_back(layer.used_codes);
    result.report.utilization.push_back(layer.utilization_fraction);
  }
  result.report.final_mse = reconstruction_mse(corpus, quantizer, config.threads);
  check_finite(result.report.final_mse, "final reconstruction error", config.steps);

  result.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace rvqkit
