#include <cmath>

#include "doctest.h"
#include "rvqkit/errors.hpp"
#include "rvqkit/random.hpp"
#include "rvqkit/rvq.hpp"
#include "rvqkit/training.hpp"

using namespace rvqkit;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Vector random_vector(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

RvqQuantizer plain_quantizer(std::vector<Matrix> books, Metric metric = Metric::euclidean) {
  RvqQuantizer q;
  q.latent_dim = static_cast<std::size_t>(books.front().cols());
  for (auto& b : books) q.layers.emplace_back(std::move(b), metric);
  return q;
}

// Independent recursion built only from nearest_code.
std::vector<double> oracle_residual_norms(const Vector& x, const RvqQuantizer& q) {
  std::vector<double> norms;
  Vector r = x;
  for (const auto& layer : q.layers) {
    r -= nearest_code(r, layer).quantized;
    norms.push_back(r.norm());
  }
  return norms;
}

}  // namespace

TEST_CASE("single layer with the latent as an entry") {
  Matrix e(3, 2);
  e << 0, 0, 2, 1, -1, 4;
  const auto q = plain_quantizer({e});
  const Vector x = e.row(2).transpose();
  const auto res = rvq_encode(x, q);
  CHECK(res.frame.codes == std::vector<Code>{2});
  CHECK(res.trace.residual_norms.back() == 0.0);
}

TEST_CASE("forced two-layer sum is recovered exactly") {
  // Layer 1 entries far apart, layer 2 entries small: the nearest choices
  // are forced and the latent is representable.
  Matrix l1(3, 2), l2(3, 2);
  l1 << 10, 0, 0, 10, -10, 0;
  l2 << 0.5, 0, 0, 0.5, -0.5, -0.5;
  const auto q = plain_quantizer({l1, l2});
  const Vector x = l1.row(1).transpose() + l2.row(2).transpose();

  // brute force over all 9 pairs confirms (1, 2) is the unique exact pair
  int exact = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if ((x - l1.row(a).transpose() - l2.row(b).transpose()).norm() == 0.0) ++exact;
  CHECK(exact == 1);

  const auto res = rvq_encode(x, q);
  CHECK(res.frame.codes == std::vector<Code>{1, 2});
  CHECK(res.trace.residual_norms.back() == 0.0);
  CHECK(rvq_decode(res.frame, q) == x);
  CHECK(rvq_decode(TokenFrame{{0, 1}}, q) == (l1.row(0) + l2.row(1)).transpose());
}

TEST_CASE("trace residual norms match an independent recursion") {
  Rng rng(21);
  const auto q = plain_quantizer({random_matrix(16, 5, rng), random_matrix(16, 5, rng, 0.5),
                                  random_matrix(16, 5, rng, 0.25), random_matrix(16, 5, rng, 0.1)});
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = random_vector(5, rng);
    const auto res = rvq_encode(x, q);
    const auto want = oracle_residual_norms(x, q);
    REQUIRE(res.trace.residual_norms.size() == want.size());
    for (std::size_t n = 0; n < want.size(); ++n)
      CHECK(res.trace.residual_norms[n] == doctest::Approx(want[n]).epsilon(1e-12));
  }
}

TEST_CASE("telescoping identity") {
  Rng rng(22);
  const auto q = plain_quantizer({random_matrix(32, 6, rng), random_matrix(32, 6, rng, 0.5),
                                  random_matrix(32, 6, rng, 0.2)});
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = random_vector(6, rng);
    const auto res = rvq_encode(x, q);
    const Vector lhs = x - rvq_decode(res.frame, q);
    CHECK((lhs - res.trace.final_residual).norm() <= 1e-6 * std::max(1.0, x.norm()));
    CHECK(res.trace.final_residual.norm() ==
          doctest::Approx(res.trace.residual_norms.back()).epsilon(1e-12));
  }
}

TEST_CASE("residual norm never increases when zero is in every codebook") {
  Rng rng(23);
  std::vector<Matrix> books;
  for (int n = 0; n < 5; ++n) {
    Matrix b = random_matrix(8, 4, rng, 1.0 / (n + 1));
    b.row(0).setZero();
    books.push_back(b);
  }
  const auto q = plain_quantizer(books);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector x = random_vector(4, rng);
    const auto res = rvq_encode(x, q);
    double prev = x.norm();
    for (double r : res.trace.residual_norms) {
      CHECK(r <= prev + 1e-12);
      prev = r;
    }
  }
}

TEST_CASE("identity projections reduce to the plain scheme") {
  Rng rng(24);
  const std::vector<Matrix> books{random_matrix(12, 4, rng), random_matrix(12, 4, rng, 0.3)};
  const auto plain = plain_quantizer(books);
  for (ResidualSpace space : {ResidualSpace::quantization, ResidualSpace::latent}) {
    auto proj = plain_quantizer(books);
    proj.scheme = Scheme::projected;
    proj.projections = {ProjectionPair::identity(4), ProjectionPair::identity(4)};
    proj.residual_space = space;
    for (int trial = 0; trial < 20; ++trial) {
      const Vector x = random_vector(4, rng);
      const auto a = rvq_encode(x, plain);
      const auto b = rvq_encode(x, proj);
      CHECK(a.frame == b.frame);
      CHECK((rvq_decode(a.frame, plain) - rvq_decode(b.frame, proj)).norm() < 1e-12);
      for (std::size_t n = 0; n < 2; ++n)
        CHECK(a.trace.residual_norms[n] == doctest::Approx(b.trace.residual_norms[n]));
    }
  }
}

TEST_CASE("projected residuals live in quantization space") {
  Rng rng(25);
  ProjectionPair pair{random_matrix(6, 2, rng), random_matrix(2, 6, rng)};
  RvqQuantizer q;
  q.latent_dim = 6;
  q.scheme = Scheme::projected;
  q.layers.emplace_back(random_matrix(10, 2, rng), Metric::euclidean);
  q.layers.emplace_back(random_matrix(10, 2, rng, 0.3), Metric::euclidean);
  q.projections = {pair, pair};
  const Vector x = random_vector(6, rng);
  const auto res = rvq_encode(x, q);

  Vector r = project_in(x, pair);
  Vector sum = Vector::Zero(2);
  for (std::size_t n = 0; n < 2; ++n) {
    const auto a = nearest_code(r, q.layers[n]);
    CHECK(static_cast<std::size_t>(res.frame.codes[n]) == a.index);
    r -= a.quantized;
    sum += a.quantized;
    CHECK(res.trace.residual_norms[n] == doctest::Approx(r.norm()).epsilon(1e-12));
  }
  CHECK((rvq_decode(res.frame, q) - project_out(sum, pair)).norm() < 1e-12);
}

TEST_CASE("encode and decode errors") {
  Rng rng(26);
  const auto q = plain_quantizer({random_matrix(4, 3, rng), random_matrix(4, 3, rng)});
  CHECK_THROWS_AS(rvq_encode(random_vector(2, rng), q), ContractViolation);
  CHECK_THROWS_AS(rvq_decode(TokenFrame{{0, 4}}, q), ContractViolation);
  CHECK_THROWS_AS(rvq_decode(TokenFrame{{-1, 0}}, q), ContractViolation);
  CHECK_THROWS_AS(rvq_decode(TokenFrame{{0}}, q), ContractViolation);
}

TEST_CASE("batch encode is deterministic and thread independent") {
  Rng rng(27);
  const auto q = plain_quantizer({random_matrix(64, 4, rng), random_matrix(64, 4, rng, 0.4)});
  const Matrix latents = random_matrix(500, 4, rng);
  const auto a = rvq_encode_batch(latents, q, 1);
  const auto b = rvq_encode_batch(latents, q, 4);
  const auto c = rvq_encode_batch(latents, q, 1);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(reconstruction_mse(latents, q, 1) == reconstruction_mse(latents, q, 3));
}

TEST_CASE("decoding fewer layers of a trained quantizer is worse on held-out data") {
  CorpusSpec spec;
  spec.num_components = 16;
  spec.dims = 8;
  spec.count = 3000;
  spec.seed = 4;
  const Matrix corpus = make_corpus(spec);
  TrainConfig cfg;
  cfg.num_layers = 4;
  cfg.codebook_size = 32;
  cfg.latent_dim = 8;
  cfg.steps = 60;
  cfg.batch_size = 128;
  const auto trained = train_quantizer(corpus.topRows(2000), cfg);
  const Matrix held_out = corpus.bottomRows(1000);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m = 1; m <= 4; ++m) {
    const double mse = reconstruction_mse(held_out, trained.quantizer, 1, m);
    CHECK(mse <= prev);
    prev = mse;
  }
}

TEST_CASE("bitrate") {
  CHECK(bitrate_bps(8, 1024, 50.0) == 4000.0);
  CHECK(bitrate_bps(1, 2, 1.0) == 1.0);
  // 1.5 kbps at 75 Hz with 10-bit codes needs 1500 / 750 = 2 layers
  CHECK(bitrate_bps(2, 1024, 75.0) == 1500.0);
  CHECK(bits_per_code(1024) == 10.0);
  CHECK(bits_per_code(1000) == 10.0);
  CHECK(bits_per_code(1025) == 11.0);
  CHECK(bits_per_code(2) == 1.0);
}
