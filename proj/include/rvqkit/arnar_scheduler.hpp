#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "rvqkit/mlm_scheduler.hpp"
#include "rvqkit/random.hpp"
#include "rvqkit/tokens.hpp"
#include "rvqkit/vq_core.hpp"

namespace rvqkit {

// AR sampling temperatures compared in the evaluation.
inline constexpr std::array<double, 3> kTemperaturePresets{1.0, 0.9, 0.8};

// Autoregressive layer-1 model. The output vocabulary is the K codes plus
// end-of-sequence at index K.
class ArModel {
 public:
  virtual ~ArModel() = default;
  virtual std::size_t codebook_size() const = 0;
  std::size_t eos() const { return codebook_size(); }
  // K + 1 finite logits for the code following `prefix`.
  virtual std::vector<double> next_logits(std::span<const Code> condition,
                                          std::span<const Code> prompt_codes,
                                          std::span<const Code> prefix) const = 0;
};

// Predicts one layer for all frames from the layers below it.
class NarModel {
 public:
  virtual ~NarModel() = default;
  virtual std::size_t codebook_size() const = 0;
  // `decoded` holds layers [0, target_layer) for every frame; returns T x K.
  virtual Matrix layer_logits(std::span<const Code> condition, const TokenStream& prompt,
                              const TokenGrid& decoded, std::size_t target_layer) const = 0;
};

struct GenConfig {
  double temperature = 1.0;
  std::size_t max_frames = 1000;
  std::uint64_t rng_seed = 0;
  std::optional<std::size_t> top_k;  // off by default

  void validate() const;
};

struct ArResult {
  std::vector<Code> codes;  // EOS excluded
  std::size_t steps = 0;    // next_logits calls
  bool stopped_on_eos = false;
};

ArResult generate_ar(const ArModel& model, std::span<const Code> condition,
                     std::span<const Code> prompt_layer1, const GenConfig& config);

// Same loop with a caller-owned generator, for drawing many utterances from
// one seed.
ArResult generate_ar(const ArModel& model, std::span<const Code> condition,
                     std::span<const Code> prompt_layer1, const GenConfig& config, Rng& rng);

struct NarResult {
  TokenStream stream;
  std::size_t passes = 0;
};

// Layers 2..N in order, one layer_logits call each, argmax per frame with
// ties to the lowest code.
NarResult generate_nar(const NarModel& model, std::span<const Code> condition,
                       const TokenStream& prompt, std::span<const Code> layer1_codes,
                       std::size_t num_layers);

struct TextToTokensResult {
  TokenStream stream;
  std::size_t ar_steps = 0;
  std::size_t nar_passes = 0;
};

// AR then NAR. The layer count comes from prompt.layers. Throws
// EmptyGeneration when the AR stage stops before producing a code.
TextToTokensResult generate_text_to_tokens(const ArModel& ar, const NarModel& nar,
                                           std::span<const Code> condition,
                                           const TokenStream& prompt, const GenConfig& config);

// --- toy models ---

// Emits a fixed code sequence, then EOS.
class OracleArModel final : public ArModel {
 public:
  OracleArModel(std::vector<Code> truth, std::size_t codebook_size, double margin = 30.0);
  std::size_t codebook_size() const override { return codebook_size_; }
  std::vector<double> next_logits(std::span<const Code> condition,
                                  std::span<const Code> prompt_codes,
                                  std::span<const Code> prefix) const override;

 private:
  std::vector<Code> truth_;
  std::size_t codebook_size_;
  double margin_;
};

// Peaks at prefix.size() mod K and never favours EOS.
class CyclingArModel final : public ArModel {
 public:
  explicit CyclingArModel(std::size_t codebook_size, double margin = 30.0);
  std::size_t codebook_size() const override { return codebook_size_; }
  std::vector<double> next_logits(std::span<const Code> condition,
                                  std::span<const Code> prompt_codes,
                                  std::span<const Code> prefix) const override;

 private:
  std::size_t codebook_size_;
  double margin_;
};

// Add-k smoothed n-gram over layer-1 codes. History is the prompt followed
// by the generated prefix, left-padded with a begin symbol; logits are log
// probabilities over K codes plus EOS.
class NgramArModel final : public ArModel {
 public:
  std::size_t codebook_size() const override { return codebook_size_; }
  std::size_t order() const { return order_; }
  double smoothing() const { return smoothing_; }
  std::vector<double> next_logits(std::span<const Code> condition,
                                  std::span<const Code> prompt_codes,
                                  std::span<const Code> prefix) const override;

  // log2 probability of `codes` followed by EOS, starting from an empty history.
  double sequence_log2_prob(std::span<const Code> codes) const;
  // 2^(-log2 P / (len + 1)) over the same events.
  double perplexity(std::span<const Code> codes) const;

 private:
  friend NgramArModel train_ngram_ar(std::span<const TokenStream>, std::size_t, double);

  struct Counts {
    std::map<Code, std::uint64_t> next;
    std::uint64_t total = 0;
  };

  std::vector<Code> context_of(std::span<const Code> history) const;
  double probability(const Counts* counts, Code symbol) const;

  std::size_t codebook_size_ = 0;
  std::size_t order_ = 1;
  double smoothing_ = 1.0;
  std::map<std::vector<Code>, Counts> table_;
};

// Trains on every stream's layer-1 codes with EOS appended. Requires
// order >= 1 and smoothing > 0; empty training data is a FormatError.
NgramArModel train_ngram_ar(std::span<const TokenStream> streams, std::size_t order,
                            double smoothing);

// Peaks at a hidden ground-truth grid.
class OracleNarModel final : public NarModel {
 public:
  OracleNarModel(TokenGrid truth, std::size_t codebook_size, double margin = 30.0);
  std::size_t codebook_size() const override { return codebook_size_; }
  Matrix layer_logits(std::span<const Code> condition, const TokenStream& prompt,
                      const TokenGrid& decoded, std::size_t target_layer) const override;

 private:
  TokenGrid truth_;
  std::size_t codebook_size_;
  double margin_;
};

}  // namespace rvqkit
