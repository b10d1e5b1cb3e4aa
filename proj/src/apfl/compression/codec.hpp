#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "apfl/core/bytes.hpp"

namespace apfl {

enum class LosslessKind : std::uint8_t { none = 0, rle = 1, deflate = 2 };

/// General-purpose byte codec; decode is told the original length.
class ByteCodec {
 public:
  virtual ~ByteCodec() = default;
  virtual LosslessKind kind() const = 0;
  virtual Bytes encode(ByteView raw) const = 0;
  virtual Bytes decode(ByteView encoded, std::size_t raw_size) const = 0;
};

const ByteCodec& lossless_codec(LosslessKind kind);

/// "none", "rle", "deflate"; "zlib" and "blosc"/"BloscCompressor" map to deflate.
LosslessKind parse_lossless(const std::string& name);
std::string_view lossless_name(LosslessKind kind);

/// PackBits-style run-length coding: control byte c < 128 is followed by c+1
/// literals; c >= 128 repeats the next byte c-125 times (3..130).
Bytes rle_encode(ByteView raw);
Bytes rle_decode(ByteView encoded, std::size_t raw_size);

std::uint32_t crc32_of(ByteView data);

}  // namespace apfl
