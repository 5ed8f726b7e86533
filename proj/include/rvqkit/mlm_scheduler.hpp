#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rvqkit/tokens.hpp"
#include "rvqkit/vq_core.hpp"

namespace rvqkit {

inline constexpr Code kMasked = -1;

// T frames x N layers of codes; kMasked marks positions still to be predicted.
class TokenGrid {
 public:
  TokenGrid() = default;
  TokenGrid(std::size_t frames, std::size_t layers, Code fill = kMasked);

  static TokenGrid from_stream(const TokenStream& stream);

  std::size_t frames() const { return frames_; }
  std::size_t layers() const { return layers_; }

  Code at(std::size_t frame, std::size_t layer) const { return codes_[frame * layers_ + layer]; }
  Code& at(std::size_t frame, std::size_t layer) { return codes_[frame * layers_ + layer]; }
  bool masked(std::size_t frame, std::size_t layer) const { return at(frame, layer) == kMasked; }
  std::size_t masked_count(std::size_t layer) const;

  // Copy with every layer above `layer` masked.
  TokenGrid visible_through(std::size_t layer) const;

  // Throws ContractViolation if any position is still masked.
  TokenStream to_stream(std::string source_id, double token_rate_hz,
                        std::size_t codebook_size) const;

  bool operator==(const TokenGrid&) const = default;

 private:
  std::size_t frames_ = 0;
  std::size_t layers_ = 0;
  std::vector<Code> codes_;
};

enum class GuidanceMode { conditional, unconditional };

// Source of per-frame logits over the K codes of one layer.
// Implementations must be deterministic and safe to call concurrently.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual std::size_t codebook_size() const = 0;
  // Returns a T x K matrix for `target_layer`. Rows for masked positions
  // must be finite.
  virtual Matrix score(const TokenGrid& grid, std::size_t target_layer,
                       std::span<const Code> condition, GuidanceMode mode) const = 0;
};

// Knows a hidden ground-truth grid. Conditional logits put `margin` on the
// true code; both modes add deterministic noise in [0, 1) derived from
// noise_seed.
class OracleScoreModel final : public ScoreModel {
 public:
  OracleScoreModel(TokenGrid truth, std::size_t codebook_size, double margin = 30.0,
                   std::uint64_t noise_seed = 0);

  std::size_t codebook_size() const override { return codebook_size_; }
  Matrix score(const TokenGrid& grid, std::size_t target_layer, std::span<const Code> condition,
               GuidanceMode mode) const override;

  const TokenGrid& truth() const { return truth_; }

 private:
  TokenGrid truth_;
  std::size_t codebook_size_;
  double margin_;
  std::uint64_t noise_seed_;
};

// All-zero logits.
class UniformScoreModel final : public ScoreModel {
 public:
  explicit UniformScoreModel(std::size_t codebook_size) : codebook_size_(codebook_size) {}
  std::size_t codebook_size() const override { return codebook_size_; }
  Matrix score(const TokenGrid& grid, std::size_t target_layer, std::span<const Code> condition,
               GuidanceMode mode) const override;

 private:
  std::size_t codebook_size_;
};

struct DecodeSchedule {
  std::size_t iterations_layer1 = 5;
  std::size_t mask_block_size = 5;
  double cfg_start = 0.0;
  double cfg_end = 2.0;
  double temperature = 1.0;
  std::uint64_t rng_seed = 0;
  // Fraction of layer-1 blocks committed at each iteration; empty selects
  // the cosine schedule.
  std::vector<double> unmask_fractions;
  // When false the unconditional pass is skipped and guidance is zero.
  bool use_unconditional = true;
  // >1 lets the conditional and unconditional passes run concurrently.
  unsigned threads = 1;

  std::vector<double> fractions() const;
  void validate() const;
};

// Per-iteration fractions from the cosine mask-ratio curve cos(pi/2 * t/I),
// which sum to 1.
std::vector<double> cosine_unmask_fractions(std::size_t iterations);

// Units committed per iteration for `units` blocks: every iteration commits
// at least one unit while units >= fractions.size(), and the counts sum to
// `units`.
std::vector<std::size_t> plan_commits(std::size_t units, std::span<const double> fractions);

// Union of aligned block_size blocks covering at least mask_rate * T positions.
std::vector<bool> span_mask(std::size_t num_frames, std::size_t block_size, double mask_rate,
                            std::uint64_t seed);

// Half-open frame ranges of the aligned blocks intersecting [first, last).
std::vector<std::pair<std::size_t, std::size_t>> aligned_blocks(std::size_t first,
                                                                std::size_t last,
                                                                std::size_t block_size);

double anneal_coeff(double progress, double cfg_start, double cfg_end);

// (1 + gamma) * cond - gamma * uncond, elementwise.
Matrix cfg_combine(const Matrix& cond_logits, const Matrix& uncond_logits, double gamma);

// Positions of the m largest confidences, ties to the lower position,
// returned in ascending position order.
std::vector<std::size_t> confidence_select(std::span<const double> confidences, std::size_t m);

struct MaskState {
  std::vector<bool> masked;       // frame-major, frames x layers
  std::vector<double> confidence; // layer-1 confidence of committed tokens, 0 for prompt
  std::size_t iteration = 0;
};

struct ParallelStats {
  std::size_t forward_passes = 0;          // conditional scoring calls
  std::size_t unconditional_passes = 0;
  std::vector<std::size_t> commits_per_iteration;  // layer-1 positions per iteration
  std::vector<double> guidance_per_iteration;
};

struct ParallelResult {
  TokenStream stream;
  ParallelStats stats;
  MaskState final_state;
};

// Layer 1 is decoded over the schedule's iterations with annealed guidance
// and block-wise confidence commits; each higher layer is one greedy pass.
// The prompt's frames are copied to the output unchanged; prompt.layers and
// prompt.codebook_size fix the grid shape.
ParallelResult generate_parallel(const ScoreModel& model, std::span<const Code> condition,
                                 const TokenStream& prompt, std::size_t total_frames,
                                 const DecodeSchedule& schedule);

}  // namespace rvqkit
