#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "doctest.h"
#include "rvqkit/errors.hpp"
#include "rvqkit/random.hpp"
#include "rvqkit/vq_core.hpp"

using namespace rvqkit;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()),
           static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Exhaustive reference distance, written independently of the library.
double brute_distance(const Vector& q, const Vector& e, Metric metric) {
  if (metric == Metric::euclidean) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) s += (q[i] - e[i]) * (q[i] - e[i]);
    return std::sqrt(s);
  }
  double dot = 0.0, nq = 0.0, ne = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    dot += q[i] * e[i];
    nq += q[i] * q[i];
    ne += e[i] * e[i];
  }
  return 1.0 - dot / std::sqrt(nq * ne);
}

}  // namespace

TEST_CASE("nearest_code euclidean picks the brute-force minimum") {
  const Codebook cb(rows({{0, 0}, {1, 0}, {0, 1}}), Metric::euclidean);
  const auto a = nearest_code(vec({0.9, 0.1}), cb);
  // distances 0.906, 0.1414, 1.273
  CHECK(a.index == 1);
  CHECK(a.distance == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
  CHECK(a.quantized == cb.entries.row(1).transpose());
}

TEST_CASE("nearest_code exact match and cosine scale invariance") {
  const Codebook euclid(rows({{1, 0}, {0, 1}}), Metric::euclidean);
  const auto exact = nearest_code(vec({1, 0}), euclid);
  CHECK(exact.index == 0);
  CHECK(exact.distance == 0.0);

  const Codebook cosine(rows({{1, 0}, {0, 1}}), Metric::cosine);
  const auto scaled = nearest_code(vec({5, 0}), cosine);
  CHECK(scaled.index == 0);
  CHECK(scaled.distance == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("nearest_code ties go to the lowest index") {
  const Codebook cb(rows({{1, 0}, {-1, 0}, {1, 0}}), Metric::euclidean);
  CHECK(nearest_code(vec({0, 0}), cb).index == 0);
  CHECK(nearest_code(vec({1, 0}), cb).index == 0);
}

TEST_CASE("nearest_code errors") {
  const Codebook cb(rows({{1, 0}, {0, 1}}), Metric::cosine);
  CHECK_THROWS_AS(nearest_code(vec({1, 0, 0}), cb), ContractViolation);
  CHECK_THROWS_AS(nearest_code(vec({0, 0}), cb), DegenerateInput);
  const Codebook zero_entry(rows({{0, 0}, {0, 1}}), Metric::cosine);
  CHECK_THROWS_AS(nearest_code(vec({1, 1}), zero_entry), DegenerateInput);
}

TEST_CASE("lookup optimality against exhaustive comparison") {
  Rng rng(7);
  for (Metric metric : {Metric::euclidean, Metric::cosine}) {
    for (Eigen::Index K : {1, 3, 64, 4096}) {
      const Codebook cb(random_matrix(K, 6, rng), metric);
      for (int trial = 0; trial < 20; ++trial) {
        Vector q(6);
        for (auto& x : q) x = rng.normal();
        const auto a = nearest_code(q, cb);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_k = 0;
        for (Eigen::Index k = 0; k < K; ++k) {
          const double d = brute_distance(q, cb.entries.row(k).transpose(), metric);
          if (d < best) {
            best = d;
            best_k = static_cast<std::size_t>(k);
          }
        }
        CHECK(a.index == best_k);
        CHECK(a.distance == doctest::Approx(best).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("quantizing an entry returns it at distance zero") {
  Rng rng(3);
  const Codebook cb(random_matrix(32, 5, rng), Metric::euclidean);
  for (Eigen::Index k = 0; k < 32; ++k) {
    const auto a = nearest_code(cb.entries.row(k).transpose(), cb);
    CHECK(a.distance == 0.0);
    CHECK(a.quantized == cb.entries.row(k).transpose());
  }
}

TEST_CASE("cosine lookup index is invariant to positive scaling") {
  Rng rng(11);
  const Codebook cb(random_matrix(50, 4, rng), Metric::cosine);
  for (int trial = 0; trial < 50; ++trial) {
    Vector q(4);
    for (auto& x : q) x = rng.normal();
    const double c = 0.01 + 100.0 * rng.uniform();
    CHECK(nearest_code(q, cb).index == nearest_code(c * q, cb).index);
  }
}

TEST_CASE("assign_batch agrees with nearest_code at any thread count") {
  Rng rng(5);
  const Codebook cb(random_matrix(40, 3, rng), Metric::euclidean);
  const Matrix queries = random_matrix(257, 3, rng);
  const auto one = assign_batch(queries, cb, 1);
  const auto four = assign_batch(queries, cb, 4);
  CHECK(one.indices == four.indices);
  CHECK(one.distances == four.distances);
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    CHECK(one.indices[static_cast<std::size_t>(i)] ==
          nearest_code(queries.row(i).transpose(), cb).index);
  }
}

TEST_CASE("ema_update converges to a repeated vector") {
  // Oracle: iterate the scalar recurrences for code 0 and an idle code.
  const double decay = 0.99, eps = 1e-5;
  const std::size_t K = 3, batch = 8192;
  const Vector v = vec({1.0, 2.0});
  double cs0 = 1.0, cs_idle = 1.0;
  Vector es0 = Vector::Zero(2);  // entry 0 starts at the origin
  for (int t = 0; t < 200; ++t) {
    cs0 = decay * cs0 + (1 - decay) * static_cast<double>(batch);
    es0 = decay * es0 + (1 - decay) * static_cast<double>(batch) * v;
    cs_idle = decay * cs_idle;
  }
  const double total = cs0 + 2 * cs_idle;
  const Vector expected = es0 / ((cs0 + eps) / (total + K * eps) * total);
  CHECK((expected - v).norm() < 1e-4);

  Codebook cb(rows({{0, 0}, {5, 5}, {-5, 5}}), Metric::euclidean);
  Matrix queries(static_cast<Eigen::Index>(batch), 2);
  queries.rowwise() = v.transpose();
  const std::vector<std::size_t> idx(batch, 0);
  for (int t = 0; t < 200; ++t) ema_update(cb, queries, idx, decay, eps);
  CHECK((cb.entries.row(0).transpose() - expected).norm() < 1e-12);
  CHECK((cb.entries.row(0).transpose() - v).norm() < 1e-4);
  CHECK(cb.usage_counts[0] == 200 * batch);
}

TEST_CASE("ema_update leaves unassigned codes in place up to smoothing") {
  Codebook cb(rows({{0, 0}, {1, 1}, {3, -2}}), Metric::euclidean);
  const Matrix q = rows({{0.1, 0.0}, {0.9, 1.1}});
  const std::vector<std::size_t> idx{0, 1};
  ema_update(cb, q, idx, 0.9, 1e-5);
  // cs = 0.9 for the idle code, es = 0.9 * (3, -2); only the Laplace
  // factor (n + eps) / (N + K eps) * N moves the ratio.
  const double total = cb.ema_cluster_size.sum();
  const double factor = (0.9 + 1e-5) / (total + 3e-5) * total / 0.9;
  CHECK((cb.entries.row(2).transpose() - vec({3, -2}) / factor).norm() < 1e-12);
  CHECK(std::abs(factor - 1.0) < 1e-4);
}

TEST_CASE("ema_update with decay 0 replaces entries by batch means") {
  Codebook cb(rows({{0, 0}, {1, 1}, {3, -2}}), Metric::euclidean);
  const Matrix q = rows({{1, 1}, {3, 3}, {-1, 0}, {-3, 0}, {-2, 3}});
  const std::vector<std::size_t> idx{0, 0, 1, 1, 1};
  ema_update(cb, q, idx, 0.0, 1e-5);
  CHECK((cb.entries.row(0).transpose() - vec({2, 2})).norm() < 1e-4);
  CHECK((cb.entries.row(1).transpose() - vec({-2, 1})).norm() < 1e-4);
}

TEST_CASE("ema_update conserves batch mass and rejects bad indices") {
  Rng rng(9);
  Codebook cb(random_matrix(8, 3, rng), Metric::euclidean);
  const Matrix q = random_matrix(100, 3, rng);
  std::vector<std::size_t> idx(100);
  for (auto& i : idx) i = rng.below(8);
  const Vector before = cb.ema_cluster_size;
  const double decay = 0.95;
  ema_update(cb, q, idx, decay);
  const double added = (cb.ema_cluster_size - decay * before).sum();
  CHECK(added == doctest::Approx((1 - decay) * 100).epsilon(1e-12));
  CHECK(cb.total_usage() == 100);

  idx[3] = 8;
  CHECK_THROWS_AS(ema_update(cb, q, idx, decay), ContractViolation);
}

TEST_CASE("restart_dead_codes") {
  Rng rng(2);
  const Matrix batch = random_matrix(30, 3, rng);

  SUBCASE("no dead codes leaves the codebook unchanged") {
    Codebook cb(random_matrix(4, 3, rng), Metric::euclidean);
    cb.usage_counts = {2, 1, 5, 1};
    const Matrix before = cb.entries;
    CHECK(restart_dead_codes(cb, batch, 1, 42) == 0);
    CHECK(cb.entries == before);
  }

  SUBCASE("unused codes are replaced by batch members") {
    Codebook cb(random_matrix(4, 3, rng), Metric::euclidean);
    cb.usage_counts = {3, 7, 0, 0};
    const Matrix before = cb.entries;
    CHECK(restart_dead_codes(cb, batch, 1, 42) == 2);
    CHECK(cb.entries.row(0) == before.row(0));
    CHECK(cb.entries.row(1) == before.row(1));
    for (Eigen::Index k : {2, 3}) {
      bool member = false;
      for (Eigen::Index i = 0; i < batch.rows(); ++i) member |= cb.entries.row(k) == batch.row(i);
      CHECK(member);
      CHECK(cb.ema_cluster_size[k] == 1.0);
      CHECK(cb.ema_embed_sum.row(k) == cb.entries.row(k));
    }
    CHECK(cb.size() == 4);
    CHECK(cb.dim() == 3);
    CHECK(cb.metric == Metric::euclidean);
    CHECK(cb.total_usage() == 0);
  }

  SUBCASE("seeded determinism") {
    Codebook a(random_matrix(6, 3, rng), Metric::cosine);
    Codebook b = a;
    a.usage_counts = b.usage_counts = {0, 4, 0, 1, 0, 0};
    restart_dead_codes(a, batch, 1, 99);
    restart_dead_codes(b, batch, 1, 99);
    CHECK(a.entries == b.entries);
  }
}

TEST_CASE("projections") {
  const ProjectionPair id = ProjectionPair::identity(3);
  const Vector x = vec({1.5, -2, 7});
  CHECK(project_in(x, id) == x);
  CHECK(project_out(x, id) == x);

  ProjectionPair pair;
  pair.proj_in = rows({{1, 0}, {0, 1}, {0, 0}, {0, 0}});
  pair.proj_out = pair.proj_in.transpose();
  CHECK(project_in(vec({3, 5, 7, 9}), pair) == vec({3, 5}));
  CHECK(project_out(vec({3, 5}), pair) == vec({3, 5, 0, 0}));
  CHECK_THROWS_AS(project_in(vec({1, 2}), pair), ContractViolation);
  CHECK_THROWS_AS(project_out(vec({1, 2, 3}), pair), ContractViolation);

  Rng rng(4);
  ProjectionPair r{random_matrix(6, 2, rng), random_matrix(2, 6, rng)};
  for (int trial = 0; trial < 20; ++trial) {
    Vector a(6), b(6);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const double s = rng.normal(), t = rng.normal();
    const Vector lhs = project_in(s * a + t * b, r);
    const Vector rhs = s * project_in(a, r) + t * project_in(b, r);
    CHECK((lhs - rhs).norm() <= 1e-6 * std::max(1.0, rhs.norm()));
  }
}

TEST_CASE("codebook and commitment losses") {
  CHECK(codebook_loss(vec({1, 2}), vec({1, 2})) == 0.0);
  CHECK(codebook_loss(vec({0, 0}), vec({3, 4})) == 25.0);
  CHECK(codebook_loss(vec({3, 4}), vec({0, 0})) == 25.0);
  CHECK(commitment_loss(vec({0, 0}), vec({3, 4})) == 25.0);
  CHECK_THROWS_AS(codebook_loss(vec({0}), vec({3, 4})), ContractViolation);
}

TEST_CASE("snake activation") {
  for (double alpha : {0.5, 1.0, 3.0}) CHECK(snake(0.0, alpha) == 0.0);
  CHECK(snake(std::numbers::pi / 2, 1.0) == doctest::Approx(std::numbers::pi / 2 + 1.0).epsilon(1e-15));
  const double alpha = 2.0;
  for (double x : {-3.0, -0.4, 0.0, 0.7, 5.1}) {
    const double shifted = x + std::numbers::pi / alpha;
    CHECK(std::abs((snake(shifted, alpha) - shifted) - (snake(x, alpha) - x)) < 1e-9);
  }
  CHECK_THROWS_AS(snake(1.0, 0.0), ContractViolation);
  CHECK_THROWS_AS(snake(1.0, -1.0), ContractViolation);
  const Vector v = snake(vec({0.0, std::numbers::pi / 2}), 1.0);
  CHECK(v[1] == doctest::Approx(std::numbers::pi / 2 + 1.0));
}

TEST_CASE("kmeans_init") {
  SUBCASE("K distinct points become the codebook") {
    const Matrix pts = rows({{0, 0}, {5, 1}, {-3, 2}, {1, -4}});
    const Codebook cb = kmeans_init(pts, 4, 3, 17);
    std::set<std::pair<double, double>> want, got;
    for (Eigen::Index i = 0; i < 4; ++i) {
      want.insert({pts(i, 0), pts(i, 1)});
      got.insert({cb.entries(i, 0), cb.entries(i, 1)});
    }
    CHECK(want == got);
  }

  SUBCASE("two blobs") {
    Rng rng(123);
    const int n = 500;
    Matrix data(2 * n, 2);
    Vector sum_a = Vector::Zero(2), sum_b = Vector::Zero(2);
    for (int i = 0; i < 2 * n; ++i) {
      const double cx = i < n ? -10.0 : 10.0;
      data(i, 0) = cx + rng.normal();
      data(i, 1) = rng.normal();
      (i < n ? sum_a : sum_b) += data.row(i).transpose();
    }
    const Vector mean_a = sum_a / n, mean_b = sum_b / n;
    const Codebook cb = kmeans_init(data, 2, 10, 5);
    const double bound = 3.0 / std::sqrt(static_cast<double>(n));
    for (Eigen::Index k = 0; k < 2; ++k) {
      const Vector c = cb.entries.row(k).transpose();
      const Vector& sample_mean = c[0] < 0 ? mean_a : mean_b;
      CHECK((c - sample_mean).norm() < 1e-9);
      CHECK(std::abs(c[0] - (c[0] < 0 ? -10.0 : 10.0)) < bound);
      CHECK(std::abs(c[1]) < bound);
    }
    CHECK(cb.ema_cluster_size.sum() == doctest::Approx(2 * n));
  }

  SUBCASE("determinism and errors") {
    Rng rng(8);
    const Matrix data = random_matrix(200, 3, rng);
    const Codebook a = kmeans_init(data, 16, 5, 3);
    const Codebook b = kmeans_init(data, 16, 5, 3);
    CHECK(a.entries == b.entries);
    CHECK_THROWS_AS(kmeans_init(data.topRows(10), 16, 5, 3), ContractViolation);
  }
}

TEST_CASE("zero cosine query falls back to code 0 only when asked") {
  const Codebook cb(rows({{0, 1}, {1, 0}}), Metric::cosine);
  CHECK_THROWS_AS(nearest_code(vec({0, 0}), cb, ZeroQuery::reject), DegenerateInput);
  const auto a = nearest_code(vec({0, 0}), cb, ZeroQuery::first_code);
  CHECK(a.index == 0);
  CHECK(a.distance == 1.0);
  CHECK(nearest_code(vec({2, 0.1}), cb, ZeroQuery::first_code).index == 1);
  const auto batch = assign_batch(rows({{0, 0}, {3, 0}}), cb, 1, ZeroQuery::first_code);
  CHECK(batch.indices == std::vector<std::size_t>{0, 1});
}
