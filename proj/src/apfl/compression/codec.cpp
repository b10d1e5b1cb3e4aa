#include "apfl/compression/codec.hpp"

#include <algorithm>
#include <cctype>

#include <zlib.h>

#include "apfl/error.hpp"

namespace apfl {

Bytes rle_encode(ByteView raw) {
  Bytes out;
  out.reserve(raw.size() + raw.size() / 128 + 1);
  std::size_t i = 0;
  while (i < raw.size()) {
    std::size_t run = 1;
    while (i + run < raw.size() && run < 130 && raw[i + run] == raw[i]) ++run;
    if (run >= 3) {
      out.push_back(static_cast<std::uint8_t>(run + 125));
      out.push_back(raw[i]);
      i += run;
      continue;
    }
    // literal stretch until the next run of 3 or the 128-byte cap
    std::size_t j = i;
    while (j < raw.size() && j - i < 128) {
      if (j + 2 < raw.size() && raw[j] == raw[j + 1] && raw[j] == raw[j + 2]) break;
      ++j;
    }
    out.push_back(static_cast<std::uint8_t>(j - i - 1));
    out.insert(out.end(), raw.begin() + static_cast<std::ptrdiff_t>(i), raw.begin() + static_cast<std::ptrdiff_t>(j));
    i = j;
  }
  return out;
}

Bytes rle_decode(ByteView encoded, std::size_t raw_size) {
  Bytes out;
  out.reserve(raw_size);
  std::size_t i = 0;
  while (i < encoded.size()) {
    const std::uint8_t c = encoded[i++];
    if (c < 128) {
      const std::size_t n = c + 1u;
      if (i + n > encoded.size() || out.size() + n > raw_size) fail(Errc::corrupt_blob, "rle literal overruns");
      out.insert(out.end(), encoded.begin() + static_cast<std::ptrdiff_t>(i),
                 encoded.begin() + static_cast<std::ptrdiff_t>(i + n));
      i += n;
    } else {
      const std::size_t n = c - 125u;
      if (i >= encoded.size() || out.size() + n > raw_size) fail(Errc::corrupt_blob, "rle run overruns");
      out.insert(out.end(), n, encoded[i++]);
    }
  }
  if (out.size() != raw_size) fail(Errc::corrupt_blob, "rle output length mismatch");
  return out;
}

std::uint32_t crc32_of(ByteView data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = crc32(crc, data.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

class NoneCodec final : public ByteCodec {
 public:
  LosslessKind kind() const override { return LosslessKind::none; }
  Bytes encode(ByteView raw) const override { return Bytes(raw.begin(), raw.end()); }
  Bytes decode(ByteView encoded, std::size_t raw_size) const override {
    if (encoded.size() != raw_size) fail(Errc::corrupt_blob, "stored length mismatch");
    return Bytes(encoded.begin(), encoded.end());
  }
};

class RleCodec final : public ByteCodec {
 public:
  LosslessKind kind() const override { return LosslessKind::rle; }
  Bytes encode(ByteView raw) const override { return rle_encode(raw); }
  Bytes decode(ByteView encoded, std::size_t raw_size) const override { return rle_decode(encoded, raw_size); }
};

class DeflateCodec final : public ByteCodec {
 public:
  LosslessKind kind() const override { return LosslessKind::deflate; }
  Bytes encode(ByteView raw) const override {
    uLongf cap = compressBound(static_cast<uLong>(raw.size()));
    Bytes out(cap);
    if (compress2(out.data(), &cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
      fail(Errc::internal, "deflate failed");
    out.resize(cap);
    return out;
  }
  Bytes decode(ByteView encoded, std::size_t raw_size) const override {
    Bytes out(raw_size);
    uLongf got = static_cast<uLongf>(raw_size);
    const int rc = uncompress(out.data(), &got, encoded.data(), static_cast<uLong>(encoded.size()));
    if (rc != Z_OK || got != raw_size) fail(Errc::corrupt_blob, "inflate failed");
    return out;
  }
};

}  // namespace

const ByteCodec& lossless_codec(LosslessKind kind) {
  static const NoneCodec none;
  static const RleCodec rle;
  static const DeflateCodec deflate;
  switch (kind) {
    case LosslessKind::none: return none;
    case LosslessKind::rle: return rle;
    case LosslessKind::deflate: return deflate;
  }
  fail(Errc::corrupt_blob, "unknown lossless codec id");
}

LosslessKind parse_lossless(const std::string& raw) {
  std::string name = raw;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "none" || name.empty()) return LosslessKind::none;
  if (name == "rle") return LosslessKind::rle;
  if (name == "deflate" || name == "zlib" || name == "blosc" || name == "blosccompressor") return LosslessKind::deflate;
  fail(Errc::config_error, "unknown lossless compressor '" + raw + "'");
}

std::string_view lossless_name(LosslessKind kind) {
  switch (kind) {
    case LosslessKind::none: return "none";
    case LosslessKind::rle: return "rle";
    case LosslessKind::deflate: return "deflate";
  }
  return "?";
}

}  // namespace apfl
