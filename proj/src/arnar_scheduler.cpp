#include "rvqkit/arnar_scheduler.hpp"

#include <cmath>
#include <string>

#include "rvqkit/errors.hpp"
#include "rvqkit/sampling.hpp"

namespace rvqkit {

void GenConfig::validate() const {
  require(temperature > 0.0 && std::isfinite(temperature), "temperature must be positive");
  require(max_frames >= 1, "max_frames must be >= 1");
  if (top_k) require(*top_k >= 1, "top_k must be >= 1");
}

ArResult generate_ar(const ArModel& model, std::span<const Code> condition,
                     std::span<const Code> prompt_layer1, const GenConfig& config, Rng& rng) {
  config.validate();
  const std::size_t K = model.codebook_size();
  ArResult out;
  while (out.codes.size() < config.max_frames) {
    const std::vector<double> logits = model.next_logits(condition, prompt_layer1, out.codes);
    ++out.steps;
    require(logits.size() == K + 1, "AR model must return K + 1 logits");
    const std::size_t next = sample_with_temperature(logits, config.temperature, rng, config.top_k);
    if (next == K) {
      out.stopped_on_eos = true;
      break;
    }
    out.codes.push_back(static_cast<Code>(next));
  }
  return out;
}

ArResult generate_ar(const ArModel& model, std::span<const Code> condition,
                     std::span<const Code> prompt_layer1, const GenConfig& config) {
  Rng rng(config.rng_seed);
  return generate_ar(model, condition, prompt_layer1, config, rng);
}

NarResult generate_nar(const NarModel& model, std::span<const Code> condition,
                       const TokenStream& prompt, std::span<const Code> layer1_codes,
                       std::size_t num_layers) {
  require(!layer1_codes.empty(), "NAR stage needs at least one layer-1 frame");
  require(num_layers >= 2, "NAR stage needs N >= 2");
  const std::size_t K = model.codebook_size();
  const std::size_t T = layer1_codes.size();
  TokenGrid grid(T, num_layers);
  for (std::size_t t = 0; t < T; ++t) {
    require(layer1_codes[t] >= 0 && static_cast<std::size_t>(layer1_codes[t]) < K,
            "layer-1 code out of range");
    grid.at(t, 0) = layer1_codes[t];
  }

  NarResult out;
  for (std::size_t n = 1; n < num_layers; ++n) {
    TokenGrid decoded(T, n);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t m = 0; m < n; ++m) decoded.at(t, m) = grid.at(t, m);
    const Matrix logits = model.layer_logits(condition, prompt, decoded, n);
    ++out.passes;
    require(logits.rows() == static_cast<Eigen::Index>(T) &&
                logits.cols() == static_cast<Eigen::Index>(K),
            "NAR model returned logits of the wrong shape");
    require(logits.allFinite(), "NAR model returned non-finite logits for layer " +
                                    std::to_string(n));
    for (std::size_t t = 0; t < T; ++t) {
      const std::span<const double> row(logits.data() + t * K, K);
      grid.at(t, n) = static_cast<Code>(argmax(row));
    }
  }
  out.stream = grid.to_stream(prompt.source_id, prompt.token_rate_hz, K);
  return out;
}

TextToTokensResult generate_text_to_tokens(const ArModel& ar, const NarModel& nar,
                                           std::span<const Code> condition,
                                           const TokenStream& prompt, const GenConfig& config) {
  require(ar.codebook_size() == nar.codebook_size(), "AR and NAR models disagree on K");
  const std::vector<Code> prompt_layer1 =
      prompt.frames.empty() ? std::vector<Code>{} : prompt.layer_codes(0);
  const ArResult first = generate_ar(ar, condition, prompt_layer1, config);
  if (first.codes.empty()) {
    throw EmptyGeneration("AR stage produced no codes before end-of-sequence");
  }
  TextToTokensResult out;
  out.ar_steps = first.steps;
  if (prompt.layers == 1) {
    TokenGrid grid(first.codes.size(), 1);
    for (std::size_t t = 0; t < first.codes.size(); ++t) grid.at(t, 0) = first.codes[t];
    out.stream = grid.to_stream(prompt.source_id, prompt.token_rate_hz, ar.codebook_size());
    return out;
  }
  NarResult rest = generate_nar(nar, condition, prompt, first.codes, prompt.layers);
  out.nar_passes = rest.passes;
  out.stream = std::move(rest.stream);
  return out;
}

OracleArModel::OracleArModel(std::vector<Code> truth, std::size_t codebook_size, double margin)
    : truth_(std::move(truth)), codebook_size_(codebook_size), margin_(margin) {
  for (Code c : truth_) {
    require(c >= 0 && static_cast<std::size_t>(c) < codebook_size_, "oracle code out of range");
  }
}

std::vector<double> OracleArModel::next_logits(std::span<const Code>, std::span<const Code>,
                                               std::span<const Code> prefix) const {
  std::vector<double> logits(codebook_size_ + 1, 0.0);
  const std::size_t at = prefix.size();
  logits[at < truth_.size() ? static_cast<std::size_t>(truth_[at]) : codebook_size_] = margin_;
  return logits;
}

CyclingArModel::CyclingArModel(std::size_t codebook_size, double margin)
    : codebook_size_(codebook_size), margin_(margin) {
  require(codebook_size_ >= 1, "cycling model needs K >= 1");
}

std::vector<double> CyclingArModel::next_logits(std::span<const Code>, std::span<const Code>,
                                                std::span<const Code> prefix) const {
  std::vector<double> logits(codebook_size_ + 1, 0.0);
  logits[prefix.size() % codebook_size_] = margin_;
  return logits;
}

std::vector<Code> NgramArModel::context_of(std::span<const Code> history) const {
  const std::size_t width = order_ - 1;
  const Code bos = static_cast<Code>(codebook_size_ + 1);
  std::vector<Code> ctx(width, bos);
  const std::size_t take = std::min(width, history.size());
  for (std::size_t i = 0; i < take; ++i) {
    ctx[width - take + i] = history[history.size() - take + i];
  }
  return ctx;
}

double NgramArModel::probability(const Counts* counts, Code symbol) const {
  const double vocab = static_cast<double>(codebook_size_ + 1);
  if (counts == nullptr) return 1.0 / vocab;
  const auto it = counts->next.find(symbol);
  const double c = it == counts->next.end() ? 0.0 : static_cast<double>(it->second);
  return (c + smoothing_) / (static_cast<double>(counts->total) + smoothing_ * vocab);
}

std::vector<double> NgramArModel::next_logits(std::span<const Code>,
                                              std::span<const Code> prompt_codes,
                                              std::span<const Code> prefix) const {
  std::vector<Code> history(prompt_codes.begin(), prompt_codes.end());
  history.insert(history.end(), prefix.begin(), prefix.end());
  const auto it = table_.find(context_of(history));
  const Counts* counts = it == table_.end() ? nullptr : &it->second;
  std::vector<double> logits(codebook_size_ + 1);
  for (std::size_t w = 0; w <= codebook_size_; ++w) {
    logits[w] = std::log(probability(counts, static_cast<Code>(w)));
  }
  return logits;
}

double NgramArModel::sequence_log2_prob(std::span<const Code> codes) const {
  std::vector<Code> history;
  double total = 0.0;
  for (std::size_t i = 0; i <= codes.size(); ++i) {
    const Code symbol = i < codes.size() ? codes[i] : static_cast<Code>(codebook_size_);
    const auto it = table_.find(context_of(history));
    total += std::log2(probability(it == table_.end() ? nullptr : &it->second, symbol));
    if (i < codes.size()) history.push_back(codes[i]);
  }
  return total;
}

double NgramArModel::perplexity(std::span<const Code> codes) const {
  return std::exp2(-sequence_log2_prob(codes) / static_cast<double>(codes.size() + 1));
}

NgramArModel train_ngram_ar(std::span<const TokenStream> streams, std::size_t order,
                            double smoothing) {
  require(order >= 1, "n-gram order must be >= 1");
  require(smoothing > 0.0 && std::isfinite(smoothing), "add-k smoothing must be positive");
  if (streams.empty()) throw FormatError("n-gram training needs at least one token stream");

  NgramArModel model;
  model.order_ = order;
  model.smoothing_ = smoothing;
  model.codebook_size_ = streams.front().codebook_size;
  std::size_t events = 0;
  for (const auto& s : streams) {
    s.validate();
    if (s.codebook_size != model.codebook_size_) {
      throw FormatError("n-gram training streams disagree on codebook_size");
    }
    std::vector<Code> codes = s.layer_codes(0);
    codes.push_back(static_cast<Code>(model.codebook_size_));
    std::vector<Code> history;
    for (Code symbol : codes) {
      auto& counts = model.table_[model.context_of(history)];
      ++counts.next[symbol];
      ++counts.total;
      ++events;
      history.push_back(symbol);
    }
  }
  if (events == 0) throw FormatError("n-gram training data is empty");
  return model;
}

OracleNarModel::OracleNarModel(TokenGrid truth, std::size_t codebook_size, double margin)
    : truth_(std::move(truth)), codebook_size_(codebook_size), margin_(margin) {}

Matrix OracleNarModel::layer_logits(std::span<const Code>, const TokenStream&,
                                    const TokenGrid& decoded, std::size_t target_layer) const {
  require(decoded.frames() <= truth_.frames(), "oracle NAR asked for more frames than it knows");
  require(target_layer < truth_.layers(), "oracle NAR target layer out of range");
  require(decoded.layers() == target_layer, "oracle NAR expects layers below the target only");
  Matrix logits = Matrix::Zero(static_cast<Eigen::Index>(decoded.frames()),
                               static_cast<Eigen::Index>(codebook_size_));
  for (std::size_t t = 0; t < decoded.frames(); ++t) {
    logits(static_cast<Eigen::Index>(t), truth_.at(t, target_layer)) = margin_;
  }
  return logits;
}

}  // namespace rvqkit
