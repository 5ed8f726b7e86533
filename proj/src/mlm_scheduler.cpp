#include "rvqkit/mlm_scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numbers>
#include <numeric>
#include <string>

#include "rvqkit/errors.hpp"
#include "rvqkit/random.hpp"
#include "rvqkit/sampling.hpp"

namespace rvqkit {

TokenGrid::TokenGrid(std::size_t frames, std::size_t layers, Code fill)
    : frames_(frames), layers_(layers), codes_(frames * layers, fill) {}

TokenGrid TokenGrid::from_stream(const TokenStream& stream) {
  TokenGrid grid(stream.frames.size(), stream.layers);
  for (std::size_t t = 0; t < stream.frames.size(); ++t) {
    require(stream.frames[t].codes.size() == stream.layers, "ragged token stream");
    for (std::size_t n = 0; n < stream.layers; ++n) grid.at(t, n) = stream.frames[t].codes[n];
  }
  return grid;
}

std::size_t TokenGrid::masked_count(std::size_t layer) const {
  std::size_t count = 0;
  for (std::size_t t = 0; t < frames_; ++t) count += masked(t, layer) ? 1 : 0;
  return count;
}

TokenGrid TokenGrid::visible_through(std::size_t layer) const {
  TokenGrid out = *this;
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t n = layer + 1; n < layers_; ++n) out.at(t, n) = kMasked;
  return out;
}

TokenStream TokenGrid::to_stream(std::string source_id, double token_rate_hz,
                                 std::size_t codebook_size) const {
  TokenStream s;
  s.source_id = std::move(source_id);
  s.token_rate_hz = token_rate_hz;
  s.layers = layers_;
  s.codebook_size = codebook_size;
  s.frames.reserve(frames_);
  for (std::size_t t = 0; t < frames_; ++t) {
    TokenFrame f;
    f.codes.assign(codes_.begin() + static_cast<std::ptrdiff_t>(t * layers_),
                   codes_.begin() + static_cast<std::ptrdiff_t>((t + 1) * layers_));
    for (Code c : f.codes) require(c != kMasked, "grid still has masked positions");
    s.frames.push_back(std::move(f));
  }
  return s;
}

OracleScoreModel::OracleScoreModel(TokenGrid truth, std::size_t codebook_size, double margin,
                                   std::uint64_t noise_seed)
    : truth_(std::move(truth)),
      codebook_size_(codebook_size),
      margin_(margin),
      noise_seed_(noise_seed) {
  require(codebook_size_ >= 1, "oracle needs K >= 1");
  require(std::isfinite(margin_) && margin_ > 0.0, "oracle margin must be positive and finite");
}

Matrix OracleScoreModel::score(const TokenGrid& grid, std::size_t target_layer,
                               std::span<const Code>, GuidanceMode mode) const {
  require(grid.frames() == truth_.frames() && grid.layers() == truth_.layers(),
          "oracle grid shape does not match its ground truth");
  require(target_layer < grid.layers(), "target layer out of range");
  const auto K = static_cast<Eigen::Index>(codebook_size_);
  Matrix logits(static_cast<Eigen::Index>(grid.frames()), K);
  for (std::size_t t = 0; t < grid.frames(); ++t) {
    const std::uint64_t base = mix_seed(noise_seed_, (t * grid.layers() + target_layer) * 2 +
                                                         (mode == GuidanceMode::conditional ? 0 : 1));
    for (Eigen::Index k = 0; k < K; ++k) {
      const std::uint64_t h = mix_seed(base, static_cast<std::uint64_t>(k));
      logits(static_cast<Eigen::Index>(t), k) = static_cast<double>(h >> 11) * 0x1.0p-53;
    }
    if (mode == GuidanceMode::conditional) {
      logits(static_cast<Eigen::Index>(t), truth_.at(t, target_layer)) += margin_;
    }
  }
  return logits;
}

Matrix UniformScoreModel::score(const TokenGrid& grid, std::size_t, std::span<const Code>,
                                GuidanceMode) const {
  return Matrix::Zero(static_cast<Eigen::Index>(grid.frames()),
                      static_cast<Eigen::Index>(codebook_size_));
}

std::vector<double> cosine_unmask_fractions(std::size_t iterations) {
  require(iterations >= 1, "need at least one iteration");
  std::vector<double> out(iterations);
  const double I = static_cast<double>(iterations);
  for (std::size_t t = 0; t < iterations; ++t) {
    const double before = std::cos(std::numbers::pi / 2.0 * static_cast<double>(t) / I);
    const double after = std::cos(std::numbers::pi / 2.0 * static_cast<double>(t + 1) / I);
    out[t] = before - after;
  }
  out.back() += 1.0 - std::accumulate(out.begin(), out.end(), 0.0);
  return out;
}

std::vector<double> DecodeSchedule::fractions() const {
  return unmask_fractions.empty() ? cosine_unmask_fractions(iterations_layer1) : unmask_fractions;
}

void DecodeSchedule::validate() const {
  require(iterations_layer1 >= 1, "iterations_layer1 must be >= 1");
  require(mask_block_size >= 1, "mask_block_size must be >= 1");
  require(temperature > 0.0, "temperature must be positive");
  require(std::isfinite(cfg_start) && std::isfinite(cfg_end), "guidance endpoints must be finite");
  if (!unmask_fractions.empty()) {
    require(unmask_fractions.size() == iterations_layer1,
            "one unmask fraction per layer-1 iteration");
    double total = 0.0;
    for (double f : unmask_fractions) {
      require(f > 0.0, "unmask fractions must be positive");
      total += f;
    }
    require(std::abs(total - 1.0) < 1e-9, "unmask fractions must sum to 1");
  }
}

std::vector<std::size_t> plan_commits(std::size_t units, std::span<const double> fractions) {
  require(!fractions.empty(), "commit plan needs at least one iteration");
  const std::size_t iters = fractions.size();
  std::vector<std::size_t> counts(iters, 0);
  std::size_t done = 0;
  double cumulative = 0.0;
  for (std::size_t t = 0; t < iters; ++t) {
    cumulative += fractions[t];
    std::size_t target = t + 1 == iters
                             ? units
                             : static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(units)));
    target = std::min(target, units);
    if (units >= iters) {
      const std::size_t later = iters - t - 1;
      target = std::clamp(target, done + 1, units - later);
    }
    target = std::max(target, done);
    counts[t] = target - done;
    done = target;
  }
  return counts;
}

std::vector<std::pair<std::size_t, std::size_t>> aligned_blocks(std::size_t first,
                                                                std::size_t last,
                                                                std::size_t block_size) {
  require(block_size >= 1, "block size must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (first >= last) return out;
  for (std::size_t b = first / block_size; b * block_size < last; ++b) {
    out.emplace_back(std::max(first, b * block_size), std::min(last, (b + 1) * block_size));
  }
  return out;
}

std::vector<bool> span_mask(std::size_t num_frames, std::size_t block_size, double mask_rate,
                            std::uint64_t seed) {
  require(num_frames >= 1, "span_mask needs T >= 1");
  require(mask_rate >= 0.0 && mask_rate <= 1.0, "mask_rate must lie in [0, 1]");
  auto blocks = aligned_blocks(0, num_frames, block_size);
  Rng rng(seed);
  for (std::size_t i = blocks.size(); i > 1; --i) {
    std::swap(blocks[i - 1], blocks[rng.below(i)]);
  }
  std::vector<bool> mask(num_frames, false);
  const double target = mask_rate * static_cast<double>(num_frames);
  std::size_t masked = 0;
  for (const auto& [lo, hi] : blocks) {
    if (static_cast<double>(masked) >= target - 1e-9) break;
    for (std::size_t t = lo; t < hi; ++t) mask[t] = true;
    masked += hi - lo;
  }
  return mask;
}

double anneal_coeff(double progress, double cfg_start, double cfg_end) {
  require(progress >= 0.0 && progress <= 1.0, "progress must lie in [0, 1]");
  return cfg_start + progress * (cfg_end - cfg_start);
}

Matrix cfg_combine(const Matrix& cond_logits, const Matrix& uncond_logits, double gamma) {
  require(cond_logits.rows() == uncond_logits.rows() && cond_logits.cols() == uncond_logits.cols(),
          "cfg_combine: logit shapes differ");
  return (1.0 + gamma) * cond_logits - gamma * uncond_logits;
}

std::vector<std::size_t> confidence_select(std::span<const double> confidences, std::size_t m) {
  require(m >= 1 && m <= confidences.size(),
          "confidence_select: need 1 <= m <= " + std::to_string(confidences.size()));
  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] > confidences[b];
  });
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

void check_rows_finite(const Matrix& logits, const TokenGrid& grid, std::size_t layer,
                       std::size_t K, const char* mode) {
  require(logits.rows() == static_cast<Eigen::Index>(grid.frames()) &&
              logits.cols() == static_cast<Eigen::Index>(K),
          "score model returned logits of the wrong shape");
  for (std::size_t t = 0; t < grid.frames(); ++t) {
    if (!grid.masked(t, layer)) continue;
    if (!logits.row(static_cast<Eigen::Index>(t)).allFinite()) {
      throw NumericalFailure(std::string("score model returned non-finite ") + mode +
                             " logits at frame " + std::to_string(t) + ", layer " +
                             std::to_string(layer));
    }
  }
}

std::span<const double> row_span(const Matrix& m, std::size_t row) {
  return {m.data() + row * static_cast<std::size_t>(m.cols()), static_cast<std::size_t>(m.cols())};
}

}  // namespace

ParallelResult generate_parallel(const ScoreModel& model, std::span<const Code> condition,
                                 const TokenStream& prompt, std::size_t total_frames,
                                 const DecodeSchedule& schedule) {
  schedule.validate();
  prompt.validate();
  const std::size_t N = prompt.layers;
  const std::size_t K = prompt.codebook_size;
  const std::size_t P = prompt.frames.size();
  require(model.codebook_size() == K, "score model K " + std::to_string(model.codebook_size()) +
                                          " does not match prompt K " + std::to_string(K));
  require(P < total_frames, "prompt length " + std::to_string(P) +
                                " must be shorter than total frames " +
                                std::to_string(total_frames));

  TokenGrid grid(total_frames, N);
  for (std::size_t t = 0; t < P; ++t)
    for (std::size_t n = 0; n < N; ++n) grid.at(t, n) = prompt.frames[t].codes[n];

  ParallelResult result;
  MaskState& state = result.final_state;
  state.confidence.assign(total_frames, 0.0);
  ParallelStats& stats = result.stats;
  Rng rng(schedule.rng_seed);

  // Layer 1: iterative, block-wise commits with annealed guidance.
  const auto blocks = aligned_blocks(P, total_frames, schedule.mask_block_size);
  const std::size_t to_generate = total_frames - P;
  const std::vector<double> fractions = schedule.fractions();
  const std::vector<std::size_t> plan = plan_commits(blocks.size(), fractions);
  std::vector<bool> block_open(blocks.size(), true);
  std::size_t committed = 0;

  for (std::size_t it = 0; it < plan.size(); ++it) {
    if (plan[it] == 0) continue;
    const double progress = static_cast<double>(committed) / static_cast<double>(to_generate);
    const double gamma =
        schedule.use_unconditional ? anneal_coeff(progress, schedule.cfg_start, schedule.cfg_end)
                                   : 0.0;
    const TokenGrid view = grid.visible_through(0);

    Matrix cond;
    Matrix uncond;
    if (schedule.use_unconditional && schedule.threads > 1) {
      auto pending = std::async(std::launch::async, [&] {
        return model.score(view, 0, condition, GuidanceMode::unconditional);
      });
      cond = model.score(view, 0, condition, GuidanceMode::conditional);
      uncond = pending.get();
    } else {
      cond = model.score(view, 0, condition, GuidanceMode::conditional);
      if (schedule.use_unconditional) {
        uncond = model.score(view, 0, condition, GuidanceMode::unconditional);
      }
    }
    ++stats.forward_passes;
    check_rows_finite(cond, view, 0, K, "conditional");
    Matrix combined;
    if (schedule.use_unconditional) {
      ++stats.unconditional_passes;
      check_rows_finite(uncond, view, 0, K, "unconditional");
      combined = cfg_combine(cond, uncond, gamma);
      check_rows_finite(combined, view, 0, K, "guided");
    } else {
      combined = std::move(cond);
    }

    // Sample every open position, then score blocks by mean confidence.
    std::vector<std::size_t> open_ids;
    std::vector<double> block_conf;
    std::vector<Code> sampled(total_frames, kMasked);
    std::vector<double> prob(total_frames, 0.0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (!block_open[b]) continue;
      double sum = 0.0;
      for (std::size_t t = blocks[b].first; t < blocks[b].second; ++t) {
        const Sample s = sample_categorical(row_span(combined, t), schedule.temperature, rng);
        sampled[t] = static_cast<Code>(s.index);
        prob[t] = s.probability;
        sum += s.probability;
      }
      open_ids.push_back(b);
      block_conf.push_back(sum / static_cast<double>(blocks[b].second - blocks[b].first));
    }

    std::size_t committed_now = 0;
    for (std::size_t pick : confidence_select(block_conf, plan[it])) {
      const std::size_t b = open_ids[pick];
      block_open[b] = false;
      for (std::size_t t = blocks[b].first; t < blocks[b].second; ++t) {
        grid.at(t, 0) = sampled[t];
        state.confidence[t] = prob[t];
        ++committed_now;
      }
    }
    committed += committed_now;
    stats.commits_per_iteration.push_back(committed_now);
    stats.guidance_per_iteration.push_back(gamma);
    ++state.iteration;
  }

  // Layers 2..N: one greedy pass each.
  for (std::size_t n = 1; n < N; ++n) {
    const TokenGrid view = grid.visible_through(n);
    const Matrix logits = model.score(view, n, condition, GuidanceMode::conditional);
    ++stats.forward_passes;
    check_rows_finite(logits, view, n, K, "conditional");
    for (std::size_t t = P; t < total_frames; ++t) {
      grid.at(t, n) = static_cast<Code>(argmax(row_span(logits, t)));
    }
  }

  state.masked.assign(total_frames * N, false);
  result.stream = grid.to_stream(prompt.source_id, prompt.token_rate_hz, K);
  return result;
}

}  // namespace rvqkit
