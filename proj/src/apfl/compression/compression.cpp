#include "apfl/compression/compression.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <limits>

#include "apfl/error.hpp"

namespace apfl {

LossyKind parse_lossy(const std::string& raw) {
  std::string name = raw;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "none" || name.empty()) return LossyKind::none;
  // Alias table: the external SZ-family/ZFP compressors all route to qz.
  for (const char* alias : {"qz", "sz2compressor", "sz3compressor", "zfpcompressor", "szxcompressor", "sz2", "sz3",
                            "zfp", "szx"})
    if (name == alias) return LossyKind::qz;
  fail(Errc::config_error, "unknown lossy compressor '" + raw + "'");
}

std::string_view lossy_name(LossyKind kind) { return kind == LossyKind::qz ? "qz" : "none"; }

void CodecConfig::validate() const {
  if (!(eb_rel > 0.0 && eb_rel < 1.0)) fail(Errc::config_error, "eb_rel must be in (0, 1)");
}

namespace {

constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 28;
constexpr std::uint8_t kConstant = 0;
constexpr std::uint8_t kQuantized = 1;

double pow2floor(double v) {
  int e = 0;
  std::frexp(v, &e);
  return std::ldexp(1.0, e - 1);
}

template <typename T>
bool grid_fits(double w, double kmin, double kmax) {
  // Every k * w must be exactly representable in T.
  const double kcap = std::ldexp(1.0, std::numeric_limits<T>::digits);
  if (std::abs(kmin) >= kcap || std::abs(kmax) >= kcap) return false;
  if (w < static_cast<double>(std::numeric_limits<T>::min())) return false;
  const double top = std::max(std::abs(kmin), std::abs(kmax)) * w;
  return top <= static_cast<double>(std::numeric_limits<T>::max());
}

void check_finite(const ParameterSet& p) {
  for (const auto& e : p) {
    e.tensor.visit([&](auto span) {
      for (auto v : span)
        if (!std::isfinite(v)) fail(Errc::non_finite_value, "tensor '" + e.name + "' holds a non-finite value");
    });
  }
}

std::pair<double, double> min_max(const Tensor& t) {
  return t.visit([](auto span) {
    auto [lo, hi] = std::minmax_element(span.begin(), span.end());
    return std::pair<double, double>(static_cast<double>(*lo), static_cast<double>(*hi));
  });
}

Bytes raw_bytes(const Tensor& t) {
  Bytes out;
  ByteWriter w(out);
  t.visit([&](auto span) { w.elements_le(std::span<const typename decltype(span)::value_type>(span)); });
  return out;
}

Tensor tensor_from_raw(DType dtype, const Shape& shape, ByteView raw) {
  Tensor t(dtype, shape);
  if (raw.size() != t.byte_size()) fail(Errc::corrupt_blob, "tensor byte count mismatch");
  ByteReader r(raw, Errc::corrupt_blob);
  t.visit([&](auto span) { r.elements_le(span); });
  return t;
}

}  // namespace

Bytes pack_bits(std::span<const std::uint64_t> values, std::uint8_t bits) {
  Bytes out((values.size() * bits + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint64_t v : values) {
    for (std::uint8_t b = 0; b < bits; ++b, ++bit)
      if ((v >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

std::vector<std::uint64_t> unpack_bits(ByteView packed, std::uint8_t bits, std::size_t count) {
  if (packed.size() != (count * bits + 7) / 8) fail(Errc::corrupt_blob, "packed index length mismatch");
  std::vector<std::uint64_t> out(count, 0);
  std::size_t bit = 0;
  for (auto& v : out) {
    for (std::uint8_t b = 0; b < bits; ++b, ++bit)
      if ((packed[bit / 8] >> (bit % 8)) & 1u) v |= std::uint64_t{1} << b;
  }
  return out;
}

std::optional<double> qz_bin_width(const Tensor& t, double eb_rel) {
  if (t.size() == 0) return std::nullopt;
  const auto [lo, hi] = min_max(t);
  const double range = hi - lo;
  if (!(range > 0.0) || !std::isfinite(range)) return std::nullopt;
  const double w0 = pow2floor(2.0 * eb_rel * range);
  // A width is kept only if the decoded tensor would choose it again; that is
  // what makes re-compressing decoded data reproduce the same blob.
  for (double w : {w0, w0 / 2}) {
    const double kmin = std::round(lo / w);
    const double kmax = std::round(hi / w);
    if (pow2floor(2.0 * eb_rel * (kmax - kmin) * w) != w) continue;
    const bool fits = t.dtype() == DType::f32 ? grid_fits<float>(w, kmin, kmax) : grid_fits<double>(w, kmin, kmax);
    if (!fits || kmax - kmin >= std::ldexp(1.0, 53)) continue;
    return w;
  }
  return std::nullopt;
}

std::optional<QzEncoding> qz_encode(const Tensor& t, double eb_rel) {
  const auto w = qz_bin_width(t, eb_rel);
  if (!w) return std::nullopt;
  const auto [lo, hi] = min_max(t);
  const double kmin = std::round(lo / *w);
  const double kmax = std::round(hi / *w);
  QzEncoding enc;
  enc.bin_width = *w;
  enc.min_value = kmin * *w;
  enc.count = t.size();
  enc.bits = static_cast<std::uint8_t>(std::bit_width(static_cast<std::uint64_t>(kmax - kmin)));
  std::vector<std::uint64_t> idx(t.size());
  t.visit([&](auto span) {
    for (std::size_t i = 0; i < span.size(); ++i)
      idx[i] = static_cast<std::uint64_t>(std::round(static_cast<double>(span[i]) / *w) - kmin);
  });
  enc.packed = pack_bits(idx, enc.bits);
  return enc;
}

Tensor qz_decode(const QzEncoding& enc, DType dtype, const Shape& shape) {
  Tensor t(dtype, shape);
  if (t.size() != enc.count) fail(Errc::corrupt_blob, "quantized element count mismatch");
  if (!(enc.bin_width > 0.0) || !std::isfinite(enc.bin_width) || !std::isfinite(enc.min_value) || enc.bits == 0 ||
      enc.bits > 64)
    fail(Errc::corrupt_blob, "bad quantizer header");
  const auto idx = unpack_bits(enc.packed, enc.bits, enc.count);
  t.visit([&](auto span) {
    using T = typename decltype(span)::value_type;
    for (std::size_t i = 0; i < span.size(); ++i)
      span[i] = static_cast<T>(enc.min_value + static_cast<double>(idx[i]) * enc.bin_width);
  });
  return t;
}

CompressedBlob compress_params(const ParameterSet& p, const CodecConfig& cfg) {
  cfg.validate();
  check_finite(p);
  const ByteCodec& codec = lossless_codec(cfg.lossless);

  Bytes out;
  ByteWriter w(out);
  w.raw(std::string_view("APFZ"));
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(cfg.lossless));
  w.u8(static_cast<std::uint8_t>(cfg.lossy));
  w.u8(0);
  w.f64be(cfg.eb_rel);
  w.u64be(0);  // total length, patched below
  w.u32be(static_cast<std::uint32_t>(p.size()));

  auto write_lossless = [&](const Tensor& t) {
    if (cfg.lossless == LosslessKind::none) {
      w.u8(static_cast<std::uint8_t>(Scheme::raw));
      w.raw(raw_bytes(t));
      return;
    }
    w.u8(static_cast<std::uint8_t>(Scheme::lossless));
    const Bytes enc = codec.encode(raw_bytes(t));
    w.u32be(static_cast<std::uint32_t>(enc.size()));
    w.raw(enc);
  };

  for (const auto& e : p) {
    if (e.name.size() > 0xFFFF) fail(Errc::name_too_long, "parameter name longer than 65535 bytes");
    w.u16be(static_cast<std::uint16_t>(e.name.size()));
    w.raw(std::string_view(e.name));
    w.u8(static_cast<std::uint8_t>(e.tensor.dtype()));
    w.u8(static_cast<std::uint8_t>(e.tensor.shape().size()));
    for (auto d : e.tensor.shape()) w.u32be(d);

    const Tensor& t = e.tensor;
    if (t.size() < cfg.small_tensor_threshold || cfg.lossy == LossyKind::none) {
      write_lossless(t);
      continue;
    }
    const auto [lo, hi] = min_max(t);
    if (lo == hi) {
      w.u8(static_cast<std::uint8_t>(Scheme::lossy));
      w.u8(kConstant);
      w.f64be(lo);
      continue;
    }
    const auto enc = qz_encode(t, cfg.eb_rel);
    if (!enc) {
      write_lossless(t);
      continue;
    }
    w.u8(static_cast<std::uint8_t>(Scheme::lossy));
    w.u8(kQuantized);
    w.f64be(enc->min_value);
    w.f64be(enc->bin_width);
    w.u8(enc->bits);
    const Bytes stage2 = codec.encode(enc->packed);
    w.u32be(static_cast<std::uint32_t>(stage2.size()));
    w.raw(stage2);
  }

  const std::uint64_t total = out.size() + 4;
  for (int i = 0; i < 8; ++i) out[16 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(total >> (8 * (7 - i)));
  w.u32be(crc32_of(out));
  return {std::move(out)};
}

namespace {

struct Header {
  LosslessKind lossless;
  std::uint32_t count;
};

// Validates length, magic, version and checksum; returns the body reader range.
Header check_container(ByteView blob) {
  if (blob.size() < kHeaderSize + 4) fail(Errc::corrupt_blob, "blob shorter than its header");
  if (!std::equal(blob.begin(), blob.begin() + 4, "APFZ")) fail(Errc::bad_magic, "not a compressed parameter blob");
  ByteReader r(blob.first(kHeaderSize), Errc::corrupt_blob);
  r.take(4);
  if (r.u8() != kVersion) fail(Errc::unsupported_version, "unsupported blob version");
  const std::uint8_t lossless = r.u8();
  r.u8();
  r.u8();
  r.f64be();
  const std::uint64_t total = r.u64be();
  const std::uint32_t count = r.u32be();
  if (total != blob.size()) fail(Errc::corrupt_blob, "blob length does not match its header");
  ByteReader tail(blob.last(4));
  if (tail.u32be() != crc32_of(blob.first(blob.size() - 4))) fail(Errc::checksum_mismatch, "blob checksum mismatch");
  if (lossless > static_cast<std::uint8_t>(LosslessKind::deflate)) fail(Errc::corrupt_blob, "unknown lossless codec");
  return {static_cast<LosslessKind>(lossless), count};
}

template <typename Fn>
void walk_entries(ByteView blob, Fn&& on_entry) {
  const Header h = check_container(blob);
  const ByteCodec& codec = lossless_codec(h.lossless);
  ByteReader r(blob.subspan(kHeaderSize, blob.size() - kHeaderSize - 4), Errc::corrupt_blob);
  for (std::uint32_t i = 0; i < h.count; ++i) {
    const std::string name = r.str(r.u16be());
    const std::uint8_t tag = r.u8();
    if (tag > 1) fail(Errc::corrupt_blob, "bad dtype tag in blob");
    const auto dtype = static_cast<DType>(tag);
    Shape shape(r.u8());
    for (auto& d : shape) d = r.u32be();
    std::size_t n = 1;
    for (auto d : shape) {
      if (d == 0) fail(Errc::corrupt_blob, "zero dimension in blob");
      n *= d;
      if (n > (std::size_t{1} << 40)) fail(Errc::corrupt_blob, "implausible tensor size in blob");
    }
    const auto scheme = static_cast<Scheme>(r.u8());
    const std::size_t raw_size = n * dtype_size(dtype);
    switch (scheme) {
      case Scheme::raw:
        on_entry(name, scheme, [&, v = r.take(raw_size)] { return tensor_from_raw(dtype, shape, v); });
        break;
      case Scheme::lossless: {
        const ByteView enc = r.take(r.u32be());
        on_entry(name, scheme, [&, enc] { return tensor_from_raw(dtype, shape, codec.decode(enc, raw_size)); });
        break;
      }
      case Scheme::lossy: {
        const std::uint8_t sub = r.u8();
        if (sub == kConstant) {
          const double v = r.f64be();
          on_entry(name, scheme, [&, v] {
            Tensor t(dtype, shape);
            for (std::size_t k = 0; k < t.size(); ++k) t.set(k, v);
            return t;
          });
        } else if (sub == kQuantized) {
          QzEncoding enc;
          enc.min_value = r.f64be();
          enc.bin_width = r.f64be();
          enc.bits = r.u8();
          enc.count = n;
          const ByteView stage2 = r.take(r.u32be());
          on_entry(name, scheme, [&, enc, stage2]() mutable {
            if (enc.bits == 0 || enc.bits > 64) fail(Errc::corrupt_blob, "bad index width");
            enc.packed = codec.decode(stage2, (n * enc.bits + 7) / 8);
            return qz_decode(enc, dtype, shape);
          });
        } else {
          fail(Errc::corrupt_blob, "unknown lossy record kind");
        }
        break;
      }
      default:
        fail(Errc::corrupt_blob, "unknown scheme tag");
    }
  }
  if (!r.done()) fail(Errc::corrupt_blob, "trailing bytes in blob");
}

}  // namespace

ParameterSet decompress_params(ByteView blob) {
  ParameterSet out;
  walk_entries(blob, [&](const std::string& name, Scheme, auto&& decode) { out.add(name, decode()); });
  return out;
}

std::vector<Scheme> blob_schemes(ByteView blob) {
  std::vector<Scheme> out;
  walk_entries(blob, [&](const std::string&, Scheme s, auto&&) { out.push_back(s); });
  return out;
}

double compression_ratio(const ParameterSet& p, const CodecConfig& cfg) {
  const auto blob = compress_params(p, cfg);
  return static_cast<double>(serialized_size(p)) / static_cast<double>(blob.bytes.size());
}

}  // namespace apfl
