#include "rvqkit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "rvqkit/analytics.hpp"
#include "rvqkit/arnar_scheduler.hpp"
#include "rvqkit/errors.hpp"
#include "rvqkit/io.hpp"
#include "rvqkit/mlm_scheduler.hpp"
#include "rvqkit/random.hpp"
#include "rvqkit/rvq.hpp"
#include "rvqkit/training.hpp"

namespace rvqkit::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void line(std::ostream& out, const std::string& key, const std::string& value) {
  out << key << ": " << value << '\n';
}
void line(std::ostream& out, const std::string& key, double value) { line(out, key, num(value)); }
void line(std::ostream& out, const std::string& key, std::size_t value) {
  line(out, key, std::to_string(value));
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += num(values[i]);
    } else {
      s += std::to_string(values[i]);
    }
  }
  return s;
}

// "components=512,dims=32,separation=4,count=20000,seed=1"
CorpusSpec parse_synth(const std::string& text, std::uint64_t default_seed) {
  CorpusSpec spec;
  spec.seed = default_seed;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--synth: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "components") {
        spec.num_components = std::stoull(value);
      } else if (key == "dims") {
        spec.dims = std::stoull(value);
      } else if (key == "separation") {
        spec.separation = std::stod(value);
      } else if (key == "count") {
        spec.count = std::stoull(value);
      } else if (key == "seed") {
        spec.seed = std::stoull(value);
      } else {
        throw UsageError("--synth: unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw UsageError("--synth: bad value for '" + key + "': '" + value + "'");
    }
  }
  return spec;
}

struct SynthOptions {
  std::size_t components = 8;
  std::size_t dims = 16;
  double separation = 4.0;
  std::size_t count = 10000;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  CorpusSpec spec;
  spec.num_components = o.components;
  spec.dims = o.dims;
  spec.separation = o.separation;
  spec.count = o.count;
  spec.seed = o.seed;
  const Matrix corpus = make_corpus(spec);
  io::write_vector_file(o.out, corpus);
  line(out, "count", static_cast<std::size_t>(corpus.rows()));
  line(out, "dim", static_cast<std::size_t>(corpus.cols()));
  return kOk;
}

struct TrainOptions {
  std::string corpus;
  std::string synth;
  std::string scheme = "ema";
  std::size_t layers = 8;
  std::size_t codebook_size = 1024;
  std::optional<std::size_t> latent_dim;
  std::optional<std::size_t> quant_dim;
  std::size_t steps = 1000;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double decay = 0.99;
  double learning_rate = 1e-3;
  double commitment_weight = 0.25;
  double codebook_weight = 1.0;
  std::size_t restart_period = 100;
  std::string metric;
  std::string init = "kmeans";
  double init_scale = 1.0;
  unsigned threads = 1;
  std::string out;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
  TrainConfig cfg;
  if (o.scheme == "ema") {
    cfg.scheme = TrainScheme::ema;
  } else if (o.scheme == "ema-restart") {
    cfg.scheme = TrainScheme::ema_restart;
  } else {
    cfg.scheme = TrainScheme::projected;
  }
  if (o.quant_dim && cfg.scheme != TrainScheme::projected) {
    throw UsageError("--quant-dim is only valid with --scheme projected");
  }
  if (o.steps == 0) throw UsageError("--steps must be >= 1");
  if (o.batch_size == 0) throw UsageError("--batch-size must be >= 1");
  if (o.layers == 0) throw UsageError("--layers must be >= 1");
  if (o.codebook_size == 0) throw UsageError("--codebook-size must be >= 1");
  if (o.corpus.empty() == o.synth.empty()) {
    throw UsageError("exactly one of --corpus or --synth is required");
  }

  CorpusSpec spec;
  if (!o.corpus.empty()) {
    spec.kind = CorpusSpec::Kind::file;
    spec.path = o.corpus;
  } else {
    spec = parse_synth(o.synth, o.seed);
  }
  const Matrix corpus = make_corpus(spec);
  const auto dim = static_cast<std::size_t>(corpus.cols());
  if (o.latent_dim && *o.latent_dim != dim) {
    throw FormatError("--latent-dim " + std::to_string(*o.latent_dim) +
                      " does not match corpus dimension " + std::to_string(dim));
  }

  cfg.num_layers = o.layers;
  cfg.codebook_size = o.codebook_size;
  cfg.latent_dim = dim;
  cfg.quant_dim = o.quant_dim.value_or(std::min<std::size_t>(8, dim));
  if (cfg.scheme == TrainScheme::projected && cfg.quant_dim > dim) {
    throw UsageError("--quant-dim " + std::to_string(cfg.quant_dim) +
                     " exceeds latent dimension " + std::to_string(dim));
  }
  cfg.steps = o.steps;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.decay = o.decay;
  cfg.learning_rate = o.learning_rate;
  cfg.commitment_weight = o.commitment_weight;
  cfg.codebook_weight = o.codebook_weight;
  cfg.restart_period = o.restart_period;
  if (o.metric == "euclidean") cfg.metric = Metric::euclidean;
  if (o.metric == "cosine") cfg.metric = Metric::cosine;
  cfg.init = o.init == "random" ? InitMethod::random : InitMethod::kmeans;
  cfg.init_scale = o.init_scale;
  cfg.threads = o.threads;

  const TrainResult result = train_quantizer(corpus, cfg);
  io::write_codebook_file(o.out, result.quantizer);

  const auto& q = result.quantizer;
  line(out, "scheme", to_string(cfg.scheme));
  line(out, "metric", to_string(q.metric()));
  line(out, "layers", q.num_layers());
  line(out, "codebook_size", q.codebook_size());
  line(out, "latent_dim", q.latent_dim);
  line(out, "quant_dim", q.quant_dim());
  line(out, "bits_per_code", bits_per_code(q.codebook_size()));
  line(out, "steps", cfg.steps);
  line(out, "corpus_vectors", static_cast<std::size_t>(corpus.rows()));
  line(out, "final_batch_mse", result.report.mse.back());
  line(out, "final_mse", result.report.final_mse);
  line(out, "codes_restarted", result.report.codes_restarted);
  for (std::size_t n = 0; n < q.num_layers(); ++n) {
    const std::string prefix = "layer_" + std::to_string(n + 1);
    line(out, prefix + "_used_codes", result.report.used_codes[n]);
    line(out, prefix + "_utilization", result.report.utilization[n]);
  }
  return kOk;
}

ResidualSpace parse_residual_space(const std::string& s) {
  return s == "latent" ? ResidualSpace::latent : ResidualSpace::quantization;
}

struct EncodeOptions {
  std::string codebook;
  std::string input;
  double token_rate = 50.0;
  std::string id = "utt0";
  std::string residual_space = "quantization";
  unsigned threads = 1;
  std::string out;
};

int cmd_encode(const EncodeOptions& o, std::ostream& out) {
  if (!(o.token_rate > 0.0)) throw UsageError("--token-rate must be positive");
  RvqQuantizer q = io::read_codebook_file(o.codebook);
  q.residual_space = parse_residual_space(o.residual_space);
  const Matrix input = io::read_vector_file(o.input);
  if (input.rows() > 0 && static_cast<std::size_t>(input.cols()) != q.latent_dim) {
    throw FormatError("input dimension " + std::to_string(input.cols()) +
                      " does not match codebook latent dimension " + std::to_string(q.latent_dim));
  }
  TokenStream stream;
  stream.source_id = o.id;
  stream.token_rate_hz = o.token_rate;
  stream.layers = q.num_layers();
  stream.codebook_size = q.codebook_size();
  stream.frames = rvq_encode_batch(input, q, o.threads);
  io::write_token_file(o.out, std::span<const TokenStream>(&stream, 1));

  line(out, "frames", stream.frames.size());
  line(out, "layers", stream.layers);
  line(out, "codebook_size", stream.codebook_size);
  line(out, "token_rate_hz", o.token_rate);
  line(out, "bits_per_code", bits_per_code(q.codebook_size()));
  line(out, "bitrate_bps", bitrate_bps(q, o.token_rate));
  return kOk;
}

struct DecodeOptions {
  std::string codebook;
  std::string tokens;
  std::string residual_space = "quantization";
  unsigned threads = 1;
  std::string out;
};

int cmd_decode(const DecodeOptions& o, std::ostream& out) {
  RvqQuantizer q = io::read_codebook_file(o.codebook);
  q.residual_space = parse_residual_space(o.residual_space);
  const auto streams = io::read_token_file(o.tokens);
  std::size_t frames = 0;
  for (const auto& s : streams) {
    if (s.layers != q.num_layers() || s.codebook_size != q.codebook_size()) {
      throw FormatError("token stream '" + s.source_id + "' has " + std::to_string(s.layers) +
                        " layers of " + std::to_string(s.codebook_size) +
                        " codes; codebook has " + std::to_string(q.num_layers()) +
                        " layers of " + std::to_string(q.codebook_size()));
    }
    frames += s.frames.size();
  }
  Matrix decoded(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(q.latent_dim));
  Eigen::Index row = 0;
  for (const auto& s : streams) {
    for (const auto& f : s.frames) decoded.row(row++) = rvq_decode(f, q).transpose();
  }
  io::write_vector_file(o.out, decoded);
  line(out, "streams", streams.size());
  line(out, "frames", frames);
  line(out, "dim", q.latent_dim);
  return kOk;
}

struct AnalyzeOptions {
  std::vector<std::string> tokens;
  std::size_t layer = 1;
  std::string format = "text";
  unsigned threads = 1;
};

int cmd_analyze(const AnalyzeOptions& o, std::ostream& out) {
  std::vector<TokenStream> streams;
  for (const auto& path : o.tokens) {
    auto more = io::read_token_file(path);
    std::move(more.begin(), more.end(), std::back_inserter(streams));
  }
  if (streams.empty()) throw FormatError("no token streams in the given files");
  if (o.layer == 0 || o.layer > streams.front().layers) {
    throw UsageError("--layer must lie in [1, " + std::to_string(streams.front().layers) + "]");
  }
  const std::size_t layer = o.layer - 1;
  const UtilizationReport report = utilization(streams, layer);
  const LayerUtilization& u = report.layer(layer);
  const auto ranks = rank_frequency(report, layer);

  if (o.format == "json-lines") {
    nlohmann::ordered_json summary;
    summary["layer"] = o.layer;
    summary["codebook_size"] = report.codebook_size;
    summary["total_frames"] = report.total_frames;
    summary["used_codes"] = u.used_codes;
    summary["utilization"] = u.utilization_fraction;
    summary["entropy_bits"] = u.entropy_bits;
    summary["perplexity"] = u.perplexity;
    out << summary.dump() << '\n';
    for (const auto& r : ranks) {
      nlohmann::ordered_json rec;
      rec["rank"] = r.rank;
      rec["count"] = r.count;
      rec["code"] = r.code;
      out << rec.dump() << '\n';
    }
    return kOk;
  }
  line(out, "layer", o.layer);
  line(out, "codebook_size", report.codebook_size);
  line(out, "total_frames", static_cast<std::size_t>(report.total_frames));
  line(out, "used_codes", u.used_codes);
  line(out, "utilization", u.utilization_fraction);
  line(out, "entropy_bits", u.entropy_bits);
  line(out, "perplexity", u.perplexity);
  out << "rank count code\n";
  for (const auto& r : ranks) out << r.rank << ' ' << r.count << ' ' << r.code << '\n';
  return kOk;
}

// Deterministic random code grid used as hidden ground truth by the simulators.
TokenGrid random_grid(std::size_t frames, std::size_t layers, std::size_t K, std::uint64_t seed) {
  TokenGrid g(frames, layers);
  Rng rng(seed);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < layers; ++n) g.at(t, n) = static_cast<Code>(rng.below(K));
  return g;
}

TokenStream grid_prefix(const TokenGrid& grid, std::size_t frames, std::size_t K, double rate,
                        std::string id) {
  TokenStream s;
  s.source_id = std::move(id);
  s.token_rate_hz = rate;
  s.layers = grid.layers();
  s.codebook_size = K;
  for (std::size_t t = 0; t < frames; ++t) {
    TokenFrame f;
    for (std::size_t n = 0; n < grid.layers(); ++n) f.codes.push_back(grid.at(t, n));
    s.frames.push_back(std::move(f));
  }
  return s;
}

TokenGrid grid_slice(const TokenGrid& grid, std::size_t first) {
  TokenGrid out(grid.frames() - first, grid.layers());
  for (std::size_t t = first; t < grid.frames(); ++t)
    for (std::size_t n = 0; n < grid.layers(); ++n) out.at(t - first, n) = grid.at(t, n);
  return out;
}

struct MlmOptions {
  std::string model = "oracle";
  std::size_t frames = 200;
  std::size_t layers = 8;
  std::size_t codebook_size = 1024;
  std::size_t iterations = 5;
  std::size_t block_size = 5;
  std::string cfg = "0:2";
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t prompt_frames = 0;
  double margin = 30.0;
  bool no_uncond = false;
  double token_rate = 50.0;
  unsigned threads = 1;
  std::string out;
  std::string truth_out;
};

int cmd_mlm_sim(const MlmOptions& o, std::ostream& out) {
  if (o.prompt_frames >= o.frames) {
    throw UsageError("--prompt-frames (" + std::to_string(o.prompt_frames) +
                     ") must be smaller than --frames (" + std::to_string(o.frames) + ")");
  }
  if (o.layers == 0 || o.codebook_size == 0) throw UsageError("--layers and --codebook-size must be >= 1");
  if (o.iterations == 0) throw UsageError("--iterations must be >= 1");
  if (o.block_size == 0) throw UsageError("--block-size must be >= 1");
  if (!(o.temperature > 0.0)) throw UsageError("--temperature must be positive");
  DecodeSchedule schedule;
  const auto colon = o.cfg.find(':');
  if (colon == std::string::npos) throw UsageError("--cfg expects START:END, got '" + o.cfg + "'");
  try {
    schedule.cfg_start = std::stod(o.cfg.substr(0, colon));
    schedule.cfg_end = std::stod(o.cfg.substr(colon + 1));
  } catch (const std::logic_error&) {
    throw UsageError("--cfg expects START:END, got '" + o.cfg + "'");
  }
  schedule.iterations_layer1 = o.iterations;
  schedule.mask_block_size = o.block_size;
  schedule.temperature = o.temperature;
  schedule.rng_seed = mix_seed(o.seed, 21);
  schedule.use_unconditional = !o.no_uncond;
  schedule.threads = o.threads;

  const TokenGrid truth = random_grid(o.frames, o.layers, o.codebook_size, mix_seed(o.seed, 20));
  const TokenStream prompt = grid_prefix(truth, o.prompt_frames, o.codebook_size, o.token_rate, "mlm-sim");
  std::unique_ptr<ScoreModel> model;
  if (o.model == "oracle") {
    model = std::make_unique<OracleScoreModel>(truth, o.codebook_size, o.margin, mix_seed(o.seed, 22));
  } else {
    model = std::make_unique<UniformScoreModel>(o.codebook_size);
  }

  const ParallelResult result = generate_parallel(*model, {}, prompt, o.frames, schedule);
  if (!o.out.empty()) io::write_token_file(o.out, std::span<const TokenStream>(&result.stream, 1));
  const TokenStream truth_stream = grid_prefix(truth, o.frames, o.codebook_size, o.token_rate, "mlm-sim");
  if (!o.truth_out.empty()) {
    io::write_token_file(o.truth_out, std::span<const TokenStream>(&truth_stream, 1));
  }

  line(out, "model", o.model);
  line(out, "frames", o.frames);
  line(out, "prompt_frames", o.prompt_frames);
  line(out, "layers", o.layers);
  line(out, "codebook_size", o.codebook_size);
  line(out, "forward_passes", result.stats.forward_passes);
  line(out, "unconditional_passes", result.stats.unconditional_passes);
  line(out, "commits_per_iteration", join(result.stats.commits_per_iteration));
  line(out, "guidance_per_iteration", join(result.stats.guidance_per_iteration));
  if (o.model == "oracle") {
    line(out, "matches_truth", result.stream == truth_stream ? "true" : "false");
  }
  return kOk;
}

struct ArnarOptions {
  std::string ar = "oracle";
  std::string nar = "oracle";
  std::string temperature = "1.0";
  std::size_t max_frames = 100;
  std::uint64_t seed = 0;
  std::string train_tokens;
  std::string support;
  std::size_t layers = 8;
  std::size_t codebook_size = 1024;
  std::size_t order = 2;
  double smoothing = 0.5;
  std::size_t utterances = 1;
  std::size_t prompt_frames = 0;
  std::optional<std::size_t> top_k;
  double token_rate = 50.0;
  unsigned threads = 1;
  std::string out;
};

double parse_temperature(const std::string& text) {
  double t = 0.0;
  try {
    std::size_t used = 0;
    t = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw UsageError("--temperature: not a number: '" + text + "'");
  }
  if (!(t > 0.0)) throw UsageError("--temperature must be positive");
  return t;
}

int cmd_arnar_sim(const ArnarOptions& o, std::ostream& out) {
  const double temperature = parse_temperature(o.temperature);
  if (o.max_frames == 0) throw UsageError("--max-frames must be >= 1");
  if (o.utterances == 0) throw UsageError("--utterances must be >= 1");
  if (o.ar == "ngram" && o.train_tokens.empty()) {
    throw UsageError("--ar ngram requires --train-tokens");
  }

  std::size_t K = o.codebook_size;
  std::size_t N = o.layers;
  std::vector<TokenStream> training;
  if (o.ar == "ngram") {
    training = io::read_token_file(o.train_tokens);
    if (training.empty()) throw FormatError(o.train_tokens + ": no token streams");
    K = training.front().codebook_size;
  }
  if (N < 2) throw UsageError("--layers must be >= 2 for AR+NAR generation");

  std::optional<std::set<Code>> support;
  if (!o.support.empty()) {
    support.emplace();
    for (const auto& s : io::read_token_file(o.support)) {
      for (const auto& f : s.frames) support->insert(f.codes.front());
    }
  }

  GenConfig config;
  config.temperature = temperature;
  config.max_frames = o.max_frames;
  config.top_k = o.top_k;

  std::optional<NgramArModel> ngram;
  if (o.ar == "ngram") ngram = train_ngram_ar(training, o.order, o.smoothing);

  std::vector<TokenStream> generated;
  std::size_t ar_steps = 0;
  std::size_t nar_passes = 0;
  std::size_t empty = 0;
  std::size_t tokens = 0;
  std::size_t out_of_support = 0;
  bool matches_truth = true;
  for (std::size_t u = 0; u < o.utterances; ++u) {
    const std::uint64_t useed = mix_seed(o.seed, 40 + u);
    const TokenGrid truth =
        random_grid(o.prompt_frames + o.max_frames, N, K, mix_seed(useed, 1));
    const TokenStream prompt =
        grid_prefix(truth, o.prompt_frames, K, o.token_rate, "gen-" + std::to_string(u));
    const TokenGrid target = grid_slice(truth, o.prompt_frames);

    std::unique_ptr<ArModel> owned;
    const ArModel* ar = nullptr;
    if (o.ar == "oracle") {
      std::vector<Code> layer1(target.frames());
      for (std::size_t t = 0; t < target.frames(); ++t) layer1[t] = target.at(t, 0);
      owned = std::make_unique<OracleArModel>(std::move(layer1), K);
      ar = owned.get();
    } else if (o.ar == "cycling") {
      owned = std::make_unique<CyclingArModel>(K);
      ar = owned.get();
    } else {
      ar = &*ngram;
    }
    const OracleNarModel nar(target, K);

    config.rng_seed = mix_seed(useed, 2);
    try {
      TextToTokensResult r = generate_text_to_tokens(*ar, nar, {}, prompt, config);
      ar_steps += r.ar_steps;
      nar_passes += r.nar_passes;
      for (const auto& f : r.stream.frames) {
        ++tokens;
        if (support && !support->contains(f.codes.front())) ++out_of_support;
      }
      if (o.ar == "oracle") {
        matches_truth = matches_truth &&
                        r.stream == target.to_stream(r.stream.source_id, o.token_rate, K);
      }
      generated.push_back(std::move(r.stream));
    } catch (const EmptyGeneration&) {
      ++empty;
      ar_steps += 1;
    }
  }
  if (!o.out.empty()) io::write_token_file(o.out, generated);

  line(out, "ar_model", o.ar);
  line(out, "nar_model", o.nar);
  line(out, "temperature", temperature);
  line(out, "layers", N);
  line(out, "codebook_size", K);
  line(out, "utterances", o.utterances);
  line(out, "empty_generations", empty);
  line(out, "generated_tokens", tokens);
  line(out, "ar_steps", ar_steps);
  line(out, "nar_passes", nar_passes);
  line(out, "nar_passes_per_utterance", N - 1);
  if (!generated.empty()) line(out, "layer1_codes", join(generated.front().layer_codes(0)));
  if (support) {
    line(out, "support_codes", support->size());
    line(out, "out_of_support_tokens", out_of_support);
    line(out, "out_of_support_rate",
         tokens == 0 ? 0.0 : static_cast<double>(out_of_support) / static_cast<double>(tokens));
  }
  if (o.ar == "oracle") line(out, "matches_truth", matches_truth ? "true" : "false");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual vector quantization and codec-token generation toolkit", "rvqkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a Gaussian-mixture vector corpus");
  synth_cmd->add_option("--components", synth.components, "Mixture components");
  synth_cmd->add_option("--dims", synth.dims, "Vector dimension");
  synth_cmd->add_option("--separation", synth.separation, "Half-width of the mean hypercube");
  synth_cmd->add_option("--count", synth.count, "Number of vectors");
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--out", synth.out, "Output vector file")->required();
  unsigned synth_threads = 1;
  synth_cmd->add_option("--threads", synth_threads);
  synth_cmd->callback([&] { action = [&] { return cmd_synth(synth, out); }; });

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train an RVQ quantizer");
  train_cmd->add_option("--corpus", train.corpus, "Vector file");
  train_cmd->add_option("--synth", train.synth, "Mixture spec, e.g. components=64,dims=16");
  train_cmd->add_option("--scheme", train.scheme)
      ->check(CLI::IsMember({"ema", "ema-restart", "projected"}));
  train_cmd->add_option("--layers", train.layers);
  train_cmd->add_option("--codebook-size", train.codebook_size);
  train_cmd->add_option("--latent-dim", train.latent_dim);
  train_cmd->add_option("--quant-dim", train.quant_dim);
  train_cmd->add_option("--steps", train.steps);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--decay", train.decay);
  train_cmd->add_option("--lr", train.learning_rate);
  train_cmd->add_option("--commitment-weight", train.commitment_weight);
  train_cmd->add_option("--codebook-weight", train.codebook_weight);
  train_cmd->add_option("--restart-period", train.restart_period);
  train_cmd->add_option("--metric", train.metric)->check(CLI::IsMember({"euclidean", "cosine"}));
  train_cmd->add_option("--init", train.init)->check(CLI::IsMember({"kmeans", "random"}));
  train_cmd->add_option("--init-scale", train.init_scale);
  train_cmd->add_option("--threads", train.threads);
  train_cmd->add_option("--out", train.out, "Output codebook file")->required();
  train_cmd->callback([&] { action = [&] { return cmd_train(train, out); }; });

  EncodeOptions encode;
  auto* encode_cmd = app.add_subcommand("encode", "Encode latent vectors into tokens");
  encode_cmd->add_option("--codebook", encode.codebook)->required();
  encode_cmd->add_option("--input", encode.input)->required();
  encode_cmd->add_option("--token-rate", encode.token_rate);
  encode_cmd->add_option("--id", encode.id);
  encode_cmd->add_option("--residual-space", encode.residual_space)
      ->check(CLI::IsMember({"quantization", "latent"}));
  encode_cmd->add_option("--threads", encode.threads);
  encode_cmd->add_option("--out", encode.out)->required();
  encode_cmd->callback([&] { action = [&] { return cmd_encode(encode, out); }; });

  DecodeOptions decode;
  auto* decode_cmd = app.add_subcommand("decode", "Decode tokens back into latent vectors");
  decode_cmd->add_option("--codebook", decode.codebook)->required();
  decode_cmd->add_option("--tokens", decode.tokens)->required();
  decode_cmd->add_option("--residual-space", decode.residual_space)
      ->check(CLI::IsMember({"quantization", "latent"}));
  decode_cmd->add_option("--threads", decode.threads);
  decode_cmd->add_option("--out", decode.out)->required();
  decode_cmd->callback([&] { action = [&] { return cmd_decode(decode, out); }; });

  AnalyzeOptions analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Code utilization and rank-frequency table");
  analyze_cmd->add_option("--tokens", analyze.tokens)->required()->expected(1, -1);
  analyze_cmd->add_option("--layer", analyze.layer, "1-based layer index");
  analyze_cmd->add_option("--format", analyze.format)
      ->check(CLI::IsMember({"text", "json-lines"}));
  analyze_cmd->add_option("--threads", analyze.threads);
  analyze_cmd->callback([&] { action = [&] { return cmd_analyze(analyze, out); }; });

  MlmOptions mlm;
  auto* mlm_cmd = app.add_subcommand("mlm-sim", "Masked parallel generation with a toy model");
  mlm_cmd->add_option("--model", mlm.model)->check(CLI::IsMember({"oracle", "uniform"}));
  mlm_cmd->add_option("--frames", mlm.frames);
  mlm_cmd->add_option("--layers", mlm.layers);
  mlm_cmd->add_option("--codebook-size", mlm.codebook_size);
  mlm_cmd->add_option("--iterations", mlm.iterations);
  mlm_cmd->add_option("--block-size", mlm.block_size);
  mlm_cmd->add_option("--cfg", mlm.cfg, "Guidance START:END");
  mlm_cmd->add_option("--temperature", mlm.temperature);
  mlm_cmd->add_option("--seed", mlm.seed);
  mlm_cmd->add_option("--prompt-frames", mlm.prompt_frames);
  mlm_cmd->add_option("--margin", mlm.margin, "Oracle logit margin");
  mlm_cmd->add_flag("--no-uncond", mlm.no_uncond, "Disable the unconditional pass");
  mlm_cmd->add_option("--token-rate", mlm.token_rate);
  mlm_cmd->add_option("--threads", mlm.threads);
  mlm_cmd->add_option("--out", mlm.out);
  mlm_cmd->add_option("--truth-out", mlm.truth_out, "Dump the hidden ground truth");
  mlm_cmd->callback([&] { action = [&] { return cmd_mlm_sim(mlm, out); }; });

  ArnarOptions arnar;
  auto* arnar_cmd = app.add_subcommand("arnar-sim", "AR+NAR generation with toy models");
  arnar_cmd->add_option("--ar", arnar.ar)->check(CLI::IsMember({"oracle", "ngram", "cycling"}));
  arnar_cmd->add_option("--nar", arnar.nar)->check(CLI::IsMember({"oracle"}));
  arnar_cmd->add_option("--temperature", arnar.temperature, "1.0, 0.9, 0.8 or any positive value");
  arnar_cmd->add_option("--max-frames", arnar.max_frames);
  arnar_cmd->add_option("--seed", arnar.seed);
  arnar_cmd->add_option("--train-tokens", arnar.train_tokens);
  arnar_cmd->add_option("--support", arnar.support, "Token file defining the in-support codes");
  arnar_cmd->add_option("--layers", arnar.layers);
  arnar_cmd->add_option("--codebook-size", arnar.codebook_size);
  arnar_cmd->add_option("--order", arnar.order);
  arnar_cmd->add_option("--smoothing", arnar.smoothing);
  arnar_cmd->add_option("--utterances", arnar.utterances);
  arnar_cmd->add_option("--prompt-frames", arnar.prompt_frames);
  arnar_cmd->add_option("--top-k", arnar.top_k);
  arnar_cmd->add_option("--token-rate", arnar.token_rate);
  arnar_cmd->add_option("--threads", arnar.threads);
  arnar_cmd->add_option("--out", arnar.out);
  arnar_cmd->callback([&] { action = [&] { return cmd_arnar_sim(arnar, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace rvqkit::cli
