#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "rvqkit/analytics.hpp"
#include "rvqkit/errors.hpp"
#include "rvqkit/random.hpp"

using namespace rvqkit;

namespace {

TokenStream stream_of(const std::vector<std::vector<Code>>& frames, std::size_t K,
                      std::string id = "s") {
  TokenStream s;
  s.source_id = std::move(id);
  s.layers = frames.front().size();
  s.codebook_size = K;
  for (const auto& f : frames) s.frames.push_back({f});
  return s;
}

TokenStream random_stream(std::size_t frames, std::size_t layers, std::size_t K, Rng& rng) {
  std::vector<std::vector<Code>> codes(frames, std::vector<Code>(layers));
  for (auto& f : codes)
    for (auto& c : f) c = static_cast<Code>(rng.below(K));
  return stream_of(codes, K);
}

}  // namespace

TEST_CASE("hand-counted layer") {
  const std::vector<TokenStream> s{stream_of({{0}, {1}, {1}, {3}}, 4)};
  const auto report = utilization(s, 0);
  const auto& l = report.layer(0);
  CHECK(l.counts == std::vector<std::uint64_t>{1, 2, 0, 1});
  CHECK(l.used_codes == 3);
  CHECK(l.utilization_fraction == 0.75);
  CHECK(report.total_frames == 4);
  // H = -(1/4 log 1/4 * 2 + 1/2 log 1/2) = 1.5 bits
  CHECK(l.entropy_bits == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(l.perplexity == doctest::Approx(std::pow(2.0, 1.5)).epsilon(1e-12));

  const auto ranks = rank_frequency(report, 0);
  REQUIRE(ranks.size() == 4);
  CHECK(ranks[0] == RankCount{1, 2, 1});
  CHECK(ranks[1] == RankCount{2, 1, 0});
  CHECK(ranks[2] == RankCount{3, 1, 3});
  CHECK(ranks[3] == RankCount{4, 0, 2});
}

TEST_CASE("single repeated code has zero entropy") {
  const std::vector<TokenStream> s{stream_of({{2}, {2}, {2}}, 8)};
  const auto& l = utilization(s, 0).layer(0);
  CHECK(l.entropy_bits == 0.0);
  CHECK(l.perplexity == 1.0);
  CHECK(l.used_codes == 1);
}

TEST_CASE("uniform stream entropy approaches log2 K") {
  Rng rng(1);
  const std::size_t K = 64;
  const std::vector<TokenStream> s{random_stream(200000, 1, K, rng)};
  const auto& l = utilization(s, 0).layer(0);
  CHECK(std::abs(l.entropy_bits - std::log2(static_cast<double>(K))) < 0.05);
}

TEST_CASE("report invariants over all layers") {
  Rng rng(2);
  const std::vector<TokenStream> s{random_stream(50, 3, 16, rng), random_stream(70, 3, 16, rng)};
  const auto report = utilization(s);
  CHECK(report.layers.size() == 3);
  CHECK(report.total_frames == 120);
  for (const auto& l : report.layers) {
    std::uint64_t sum = 0;
    for (auto c : l.counts) sum += c;
    CHECK(sum == 120);
    CHECK(l.used_codes <= 16);
    CHECK(l.utilization_fraction == static_cast<double>(l.used_codes) / 16.0);
    CHECK(l.perplexity == doctest::Approx(std::exp2(l.entropy_bits)).epsilon(1e-12));
    const auto ranks = rank_frequency(report, l.layer);
    CHECK(ranks.size() == 16);
    const auto nonzero = std::count_if(ranks.begin(), ranks.end(), [](const RankCount& r) { return r.count > 0; });
    CHECK(static_cast<std::size_t>(nonzero) == l.used_codes);
    for (std::size_t i = 1; i < ranks.size(); ++i) {
      CHECK(ranks[i - 1].count >= ranks[i].count);
      CHECK(ranks[i].rank == i + 1);
      if (ranks[i - 1].count == ranks[i].count) CHECK(ranks[i - 1].code < ranks[i].code);
    }
  }
  CHECK_THROWS_AS(report.layer(3), ContractViolation);
}

TEST_CASE("counting is permutation invariant and additive") {
  Rng rng(3);
  std::vector<TokenStream> a{random_stream(40, 2, 8, rng), random_stream(30, 2, 8, rng)};
  std::vector<TokenStream> b{random_stream(25, 2, 8, rng)};
  const auto ra = utilization(a);
  const auto rb = utilization(b);

  std::vector<TokenStream> shuffled = a;
  std::reverse(shuffled.begin(), shuffled.end());
  for (auto& s : shuffled) std::reverse(s.frames.begin(), s.frames.end());
  const auto rs = utilization(shuffled);
  for (std::size_t n = 0; n < 2; ++n) CHECK(rs.layer(n).counts == ra.layer(n).counts);

  std::vector<TokenStream> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const auto rab = utilization(both);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t k = 0; k < 8; ++k)
      CHECK(rab.layer(n).counts[k] == ra.layer(n).counts[k] + rb.layer(n).counts[k]);
  }
}

TEST_CASE("mixed codebook sizes or layer counts are rejected") {
  const std::vector<TokenStream> mixed_k{stream_of({{0}}, 4, "a"), stream_of({{0}}, 8, "b")};
  CHECK_THROWS_AS(utilization(mixed_k, 0), FormatError);
  const std::vector<TokenStream> mixed_n{stream_of({{0}}, 4, "a"), stream_of({{0, 1}}, 4, "b")};
  CHECK_THROWS_AS(utilization(mixed_n), FormatError);
  const std::vector<TokenStream> ok{stream_of({{0}}, 4)};
  CHECK_THROWS_AS(utilization(ok, 1), ContractViolation);
}
