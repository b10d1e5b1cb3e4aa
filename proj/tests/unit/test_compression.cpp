#include <cmath>
#include <limits>
#include <random>

#include "apfl/compression/compression.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace apfl;

namespace {

Tensor filled(DType dt, std::uint32_t n, auto&& gen) {
  Tensor t(dt, {n});
  for (std::size_t i = 0; i < n; ++i) t.set(i, gen());
  return t;
}

ParameterSet single(std::string name, Tensor t) {
  ParameterSet p;
  p.add(std::move(name), std::move(t));
  return p;
}

double max_err(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.get(i) - b.get(i)));
  return m;
}

double range_of(const Tensor& t) {
  double lo = t.get(0), hi = t.get(0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    lo = std::min(lo, t.get(i));
    hi = std::max(hi, t.get(i));
  }
  return hi - lo;
}

Errc code_of(ByteView blob) {
  try {
    decompress_params(blob);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::ok;
}

}  // namespace

TEST_CASE("rle round trips and shrinks runs") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> byte(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    Bytes raw(static_cast<std::size_t>(trial * 7));
    for (auto& b : raw) b = static_cast<std::uint8_t>(byte(rng) == 0 ? 0 : byte(rng));
    CHECK(rle_decode(rle_encode(raw), raw.size()) == raw);
  }
  const Bytes zeros(10000, 0);
  CHECK(rle_encode(zeros).size() < 200);
  CHECK_THROWS_AS(rle_decode(Bytes{5, 1}, 6), Error);
}

TEST_CASE("bit packing round trip") {
  std::mt19937_64 rng(2);
  for (std::uint8_t bits : {1, 3, 7, 8, 13, 31, 64}) {
    std::vector<std::uint64_t> v(101);
    const std::uint64_t mask = bits == 64 ? ~0ULL : ((1ULL << bits) - 1);
    for (auto& x : v) x = rng() & mask;
    const Bytes packed = pack_bits(v, bits);
    CHECK(packed.size() == (101 * bits + 7) / 8);
    CHECK(unpack_bits(packed, bits, v.size()) == v);
  }
}

TEST_CASE("constant large tensor becomes a constant record") {
  const ParameterSet p = single("c", filled(DType::f32, 1000000, [] { return 0.75; }));
  const auto blob = compress_params(p, {});
  CHECK(blob.bytes.size() <= 64 + 28 + 4);
  CHECK(decompress_params(blob) == p);
  CHECK(compression_ratio(p, {}) > 1000.0);
}

TEST_CASE("Gaussian tensor of 65536 f32 compresses at least 3x") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  const ParameterSet p = single("g", filled(DType::f32, 65536, [&] { return g(rng); }));
  const auto blob = compress_params(p, {});
  CHECK(blob_schemes(blob.bytes) == std::vector<Scheme>{Scheme::lossy});
  const double ratio = compression_ratio(p, {});
  MESSAGE("ratio " << ratio);
  CHECK(ratio >= 3.0);
}

TEST_CASE("Gaussian 1M-element tensor ratio lands in [3, 6]") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  const ParameterSet p = single("g", filled(DType::f32, 1 << 20, [&] { return g(rng); }));
  const double ratio = compression_ratio(p, {});
  MESSAGE("ratio " << ratio);
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 6.0);
}

TEST_CASE("small tensors take the lossless path bit-exactly") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  ParameterSet p;
  p.add("small", filled(DType::f32, 100, [&] { return g(rng); }));
  p.add("edge", filled(DType::f64, 1023, [&] { return g(rng); }));
  p.add("big", filled(DType::f32, 1024, [&] { return g(rng); }));
  for (auto lossless : {LosslessKind::none, LosslessKind::rle, LosslessKind::deflate}) {
    CodecConfig cfg;
    cfg.lossless = lossless;
    const auto blob = compress_params(p, cfg);
    const auto schemes = blob_schemes(blob.bytes);
    const Scheme small = lossless == LosslessKind::none ? Scheme::raw : Scheme::lossless;
    CHECK(schemes[0] == small);
    CHECK(schemes[1] == small);
    CHECK(schemes[2] == Scheme::lossy);
    const ParameterSet back = decompress_params(blob);
    CHECK(back[0] == p[0]);
    CHECK(back[1] == p[1]);
    CHECK(back[2].tensor.shape() == p[2].tensor.shape());
  }
}

TEST_CASE("uniform [0,1] tensor error stays within 0.01") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  const ParameterSet p = single("u", filled(DType::f64, 10000, [&] { return u(rng); }));
  const ParameterSet back = decompress_params(compress_params(p, {}));
  CHECK(max_err(p[0].tensor, back[0].tensor) <= 0.01);
}

TEST_CASE("error bound holds across distributions, dtypes and bounds") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0, 1);
  std::cauchy_distribution<double> heavy(0, 1);
  std::exponential_distribution<double> ex(3.0);
  std::uniform_real_distribution<double> offset(-1e3, 1e3);
  int lossy = 0, total = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const DType dt = trial % 2 ? DType::f32 : DType::f64;
    const double shift = trial % 5 == 0 ? offset(rng) : 0.0;
    const int kind = trial % 3;
    auto draw = [&] {
      if (kind == 0) return shift + g(rng);
      if (kind == 1) return shift + heavy(rng);
      return shift + ex(rng) * 1e-4;
    };
    CodecConfig cfg;
    cfg.eb_rel = std::array{0.1, 0.01, 1e-3, 1e-5}[static_cast<std::size_t>(trial % 4)];
    const ParameterSet p = single("t", filled(dt, 4096, draw));
    const auto blob = compress_params(p, cfg);
    const ParameterSet back = decompress_params(blob);
    const double bound = cfg.eb_rel * range_of(p[0].tensor) + 1e-12;
    CHECK(max_err(p[0].tensor, back[0].tensor) <= bound);
    lossy += blob_schemes(blob.bytes)[0] == Scheme::lossy;
    ++total;
    // idempotent fidelity: quantization is a projection
    CHECK(compress_params(back, cfg).bytes == blob.bytes);
  }
  MESSAGE(lossy << " of " << total << " tensors took the lossy path");
  CHECK(lossy * 10 >= total * 9);
}

TEST_CASE("non-finite input is rejected") {
  ParameterSet p = single("x", filled(DType::f64, 2000, [] { return 1.0; }));
  p[0].tensor.set(17, std::numeric_limits<double>::quiet_NaN());
  try {
    compress_params(p, {});
    FAIL("expected NonFiniteValue");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite_value);
  }
  p[0].tensor.set(17, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(compress_params(p, {}), Error);
}

TEST_CASE("corrupt blobs are detected") {
  std::mt19937_64 rng(8);
  const ParameterSet p = apfl::testing::random_params(rng, DType::f32, 4);
  const Bytes good = compress_params(p, {}).bytes;
  CHECK(decompress_params(good) == p);

  Bytes truncated(good.begin(), good.end() - 3);
  CHECK(code_of(truncated) == Errc::corrupt_blob);
  CHECK(code_of(Bytes(good.begin(), good.begin() + 10)) == Errc::corrupt_blob);

  Bytes flipped = good;
  flipped[flipped.size() / 2] ^= 0x40;
  CHECK(code_of(flipped) == Errc::checksum_mismatch);

  Bytes magic = good;
  magic[0] = 'X';
  CHECK(code_of(magic) == Errc::bad_magic);
}

TEST_CASE("random fuzz never escapes as anything but a structured error") {
  std::mt19937_64 rng(9);
  const Bytes good = compress_params(apfl::testing::random_params(rng, DType::f64, 3), {}).bytes;
  std::uniform_int_distribution<std::size_t> pos(0, good.size() - 1);
  for (int i = 0; i < 2000; ++i) {
    Bytes b = good;
    b[pos(rng)] = static_cast<std::uint8_t>(rng());
    const Errc c = code_of(b);
    CHECK((c == Errc::ok || c == Errc::checksum_mismatch || c == Errc::corrupt_blob || c == Errc::bad_magic ||
           c == Errc::unsupported_version));
  }
}

TEST_CASE("compressor names") {
  CHECK(parse_lossy("SZ2Compressor") == LossyKind::qz);
  CHECK(parse_lossy("ZFPCompressor") == LossyKind::qz);
  CHECK(parse_lossless("BloscCompressor") == LosslessKind::deflate);
  CHECK_THROWS_AS(parse_lossy("gzip9000"), Error);
}
