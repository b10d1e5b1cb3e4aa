#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "apfl/compression/codec.hpp"
#include "apfl/core/params.hpp"

namespace apfl {

enum class LossyKind : std::uint8_t { none = 0, qz = 1 };

/// "qz", "none"; SZ2/SZ3/ZFP/SZx compressor class names alias to qz.
LossyKind parse_lossy(const std::string& name);
std::string_view lossy_name(LossyKind kind);

struct CodecConfig {
  LosslessKind lossless = LosslessKind::deflate;
  LossyKind lossy = LossyKind::qz;
  double eb_rel = 0.01;
  std::size_t small_tensor_threshold = 1024;

  void validate() const;
};

enum class Scheme : std::uint8_t { raw = 0, lossless = 1, lossy = 2 };

/// Quantized form of one tensor: values snap to the grid k * bin_width with
/// bin_width a power of two, indices stored relative to the smallest k.
struct QzEncoding {
  double min_value = 0.0;  // k_min * bin_width
  double bin_width = 0.0;
  std::uint8_t bits = 0;
  std::uint64_t count = 0;
  Bytes packed;  // before the lossless stage
};

/// Picks the bin width for `t`, or nullopt when the tensor should not take the
/// lossy path (the width would not reproduce itself on the decoded values, or
/// the grid cannot be represented exactly in the tensor's dtype).
std::optional<double> qz_bin_width(const Tensor& t, double eb_rel);

std::optional<QzEncoding> qz_encode(const Tensor& t, double eb_rel);
Tensor qz_decode(const QzEncoding& enc, DType dtype, const Shape& shape);

Bytes pack_bits(std::span<const std::uint64_t> values, std::uint8_t bits);
std::vector<std::uint64_t> unpack_bits(ByteView packed, std::uint8_t bits, std::size_t count);

struct CompressedBlob {
  Bytes bytes;
};

/// Container: "APFZ", version, codec ids, total length, per-tensor records,
/// CRC32 trailer over everything before it.
CompressedBlob compress_params(const ParameterSet& p, const CodecConfig& cfg);
ParameterSet decompress_params(ByteView blob);
inline ParameterSet decompress_params(const CompressedBlob& blob) { return decompress_params(blob.bytes); }

/// Scheme chosen for every tensor of a blob, in order.
std::vector<Scheme> blob_schemes(ByteView blob);

double compression_ratio(const ParameterSet& p, const CodecConfig& cfg);

}  // namespace apfl
