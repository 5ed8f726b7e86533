#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rvqkit/rvq.hpp"
#include "rvqkit/tokens.hpp"
#include "rvqkit/vq_core.hpp"

namespace rvqkit::io {

// All binary formats are little-endian with no padding.
//
// Vector file:
//   "RVQV" | version u32 | count u64 | dim u32 | count*dim f32, row-major
//
// Codebook file:
//   "RVQC" | version u32 | scheme u8 | metric u8 | layers u32 | K u32 | d u32 | q u32
//   then per layer: [proj_in d*q f32] entries K*q f32 [proj_out q*d f32]
//   (projections present only when scheme == projected)
//
// Token stream file: one JSON object per line,
//   {"id":..,"token_rate_hz":..,"layers":..,"codebook_size":..,"codes":[[..],..]}

inline constexpr std::uint32_t kFormatVersion = 1;

std::string encode_vectors(const Matrix& vectors);
Matrix decode_vectors(std::string_view bytes);

std::string encode_codebook(const RvqQuantizer& quantizer);
RvqQuantizer decode_codebook(std::string_view bytes);

std::string encode_token_streams(std::span<const TokenStream> streams);
std::vector<TokenStream> decode_token_streams(std::string_view text);

// Throws FormatError when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

Matrix read_vector_file(const std::filesystem::path& path);
void write_vector_file(const std::filesystem::path& path, const Matrix& vectors);

RvqQuantizer read_codebook_file(const std::filesystem::path& path);
void write_codebook_file(const std::filesystem::path& path, const RvqQuantizer& quantizer);

std::vector<TokenStream> read_token_file(const std::filesystem::path& path);
void write_token_file(const std::filesystem::path& path, std::span<const TokenStream> streams);

}  // namespace rvqkit::io
