#include "rvqkit/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "json.hpp"
#include "rvqkit/errors.hpp"

namespace rvqkit::io {

namespace {

constexpr std::string_view kVectorMagic = "RVQV";
constexpr std::string_view kCodebookMagic = "RVQC";

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void matrix(const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string_view what) : data_(data), what_(what) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() {
    auto s = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::uint64_t u64() {
    auto s = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  Matrix matrix(std::size_t rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f32();
    return m;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(std::string(what_) + ": " + msg);
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      fail("truncated (needed " + std::to_string(n) + " more bytes at offset " +
           std::to_string(pos_) + ")");
    }
  }

  std::string_view data_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ContractViolation(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

void check_magic_and_version(Reader& in, std::string_view magic) {
  if (in.bytes(4) != magic) in.fail("bad magic, expected \"" + std::string(magic) + "\"");
  const std::uint32_t version = in.u32();
  if (version != kFormatVersion) in.fail("unsupported version " + std::to_string(version));
}

}  // namespace

std::string encode_vectors(const Matrix& vectors) {
  Writer w;
  w.bytes(kVectorMagic);
  w.u32(kFormatVersion);
  w.u64(static_cast<std::uint64_t>(vectors.rows()));
  w.u32(checked_u32(static_cast<std::size_t>(vectors.cols()), "vector dimension"));
  w.matrix(vectors);
  return w.take();
}

Matrix decode_vectors(std::string_view bytes) {
  Reader in(bytes, "vector file");
  check_magic_and_version(in, kVectorMagic);
  const std::uint64_t count = in.u64();
  const std::uint32_t dim = in.u32();
  if (dim == 0 && count > 0) in.fail("zero dimension with non-zero count");
  // Divide rather than multiply so absurd headers cannot overflow.
  if (dim > 0 && count > in.remaining() / 4 / dim) {
    in.fail("payload shorter than declared " + std::to_string(count) + " x " +
            std::to_string(dim));
  }
  if (in.remaining() != count * dim * 4) {
    in.fail("payload length " + std::to_string(in.remaining()) + " does not match declared " +
            std::to_string(count) + " x " + std::to_string(dim));
  }
  return in.matrix(count, dim);
}

std::string encode_codebook(const RvqQuantizer& quantizer) {
  quantizer.validate();
  const bool projected = quantizer.scheme == Scheme::projected;
  Writer w;
  w.bytes(kCodebookMagic);
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(quantizer.scheme));
  w.u8(static_cast<std::uint8_t>(quantizer.metric()));
  w.u32(checked_u32(quantizer.num_layers(), "layer count"));
  w.u32(checked_u32(quantizer.codebook_size(), "codebook size"));
  w.u32(checked_u32(quantizer.latent_dim, "latent dimension"));
  w.u32(checked_u32(quantizer.quant_dim(), "quantization dimension"));
  for (std::size_t n = 0; n < quantizer.num_layers(); ++n) {
    if (projected) w.matrix(quantizer.projections[n].proj_in);
    w.matrix(quantizer.layers[n].entries);
    if (projected) w.matrix(quantizer.projections[n].proj_out);
  }
  return w.take();
}

RvqQuantizer decode_codebook(std::string_view bytes) {
  Reader in(bytes, "codebook file");
  check_magic_and_version(in, kCodebookMagic);
  const std::uint8_t scheme_tag = in.u8();
  const std::uint8_t metric_tag = in.u8();
  if (scheme_tag > 1) in.fail("unknown scheme tag " + std::to_string(scheme_tag));
  if (metric_tag > 1) in.fail("unknown metric tag " + std::to_string(metric_tag));
  const std::uint64_t N = in.u32();
  const std::uint64_t K = in.u32();
  const std::uint64_t d = in.u32();
  const std::uint64_t q = in.u32();
  if (N == 0 || K == 0 || d == 0 || q == 0) in.fail("header dimensions must be non-zero");
  const bool projected = scheme_tag == 1;
  if (!projected && q != d) in.fail("plain scheme requires q == d");
  if (projected && q > d) in.fail("projected scheme requires q <= d");
  const std::uint64_t per_layer = K * q + (projected ? 2 * d * q : 0);
  if (in.remaining() != N * per_layer * 4) {
    in.fail("payload length " + std::to_string(in.remaining()) +
            " does not match header (expected " + std::to_string(N * per_layer * 4) + ")");
  }

  RvqQuantizer quantizer;
  quantizer.latent_dim = d;
  quantizer.scheme = projected ? Scheme::projected : Scheme::plain;
  const Metric metric = metric_tag == 1 ? Metric::cosine : Metric::euclidean;
  for (std::uint64_t n = 0; n < N; ++n) {
    ProjectionPair pair;
    if (projected) pair.proj_in = in.matrix(d, q);
    Matrix entries = in.matrix(K, q);
    if (!entries.allFinite()) in.fail("non-finite entry in layer " + std::to_string(n));
    quantizer.layers.emplace_back(std::move(entries), metric);
    if (projected) {
      pair.proj_out = in.matrix(q, d);
      if (!pair.proj_in.allFinite() || !pair.proj_out.allFinite()) {
        in.fail("non-finite projection in layer " + std::to_string(n));
      }
      quantizer.projections.push_back(std::move(pair));
    }
  }
  return quantizer;
}

std::string encode_token_streams(std::span<const TokenStream> streams) {
  std::string out;
  for (const auto& s : streams) {
    s.validate();
    nlohmann::ordered_json rec;
    rec["id"] = s.source_id;
    rec["token_rate_hz"] = s.token_rate_hz;
    rec["layers"] = s.layers;
    rec["codebook_size"] = s.codebook_size;
    auto codes = nlohmann::ordered_json::array();
    for (const auto& f : s.frames) codes.push_back(f.codes);
    rec["codes"] = std::move(codes);
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<TokenStream> decode_token_streams(std::string_view text) {
  std::vector<TokenStream> streams;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    const std::string where = "token file line " + std::to_string(line_no);
    try {
      const auto rec = nlohmann::json::parse(line);
      TokenStream s;
      s.source_id = rec.at("id").get<std::string>();
      s.token_rate_hz = rec.at("token_rate_hz").get<double>();
      s.layers = rec.at("layers").get<std::size_t>();
      s.codebook_size = rec.at("codebook_size").get<std::size_t>();
      for (const auto& frame : rec.at("codes")) {
        s.frames.push_back(TokenFrame{frame.get<std::vector<Code>>()});
      }
      s.validate();
      streams.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const ContractViolation& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return streams;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw FormatError("error reading " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw FormatError("error writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError("cannot move " + tmp.string() + " into place at " + path.string());
  }
}

Matrix read_vector_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_vectors(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_vector_file(const std::filesystem::path& path, const Matrix& vectors) {
  write_file_atomic(path, encode_vectors(vectors));
}

RvqQuantizer read_codebook_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_codebook(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_codebook_file(const std::filesystem::path& path, const RvqQuantizer& quantizer) {
  write_file_atomic(path, encode_codebook(quantizer));
}

std::vector<TokenStream> read_token_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_token_streams(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_token_file(const std::filesystem::path& path, std::span<const TokenStream> streams) {
  write_file_atomic(path, encode_token_streams(streams));
}

}  // namespace rvqkit::io
