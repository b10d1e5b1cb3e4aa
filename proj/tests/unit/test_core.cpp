#include <cmath>
#include <filesystem>
#include <random>

#include "apfl/core/params.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace apfl;
using apfl::testing::random_params;
using apfl::testing::random_like;
using apfl::testing::scalar_set;

TEST_CASE("weighted_sum with identity weight returns the input") {
  std::mt19937_64 rng(1);
  const ParameterSet p = random_params(rng, DType::f32);
  const double w[] = {1.0};
  const ParameterSet* sets[] = {&p};
  CHECK(weighted_sum(std::span<const ParameterSet* const>(sets), w) == p);
}

TEST_CASE("weighted_sum symmetric average") {
  const ParameterSet a = scalar_set("a", {2.0});
  const ParameterSet b = scalar_set("a", {4.0});
  const ParameterSet sets[] = {a, b};
  const double w[] = {0.5, 0.5};
  CHECK(weighted_sum(sets, w) == scalar_set("a", {3.0}));
}

TEST_CASE("weighted_sum matches an element-loop oracle") {
  std::mt19937_64 rng(7);
  const ParameterSet p0 = random_params(rng, DType::f64, 4);
  const ParameterSet sets[] = {p0, random_like(rng, p0), random_like(rng, p0)};
  const double w[] = {0.2, 0.3, 0.5};
  const ParameterSet got = weighted_sum(sets, w);
  for (std::size_t e = 0; e < p0.size(); ++e) {
    for (std::size_t i = 0; i < p0[e].tensor.size(); ++i) {
      double expect = 0.0;
      for (int k = 0; k < 3; ++k) expect += w[k] * sets[k][e].tensor.get(i);
      CHECK(std::abs(got[e].tensor.get(i) - expect) <= 1e-12);
    }
  }
}

TEST_CASE("weighted_sum is linear in the weights") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const ParameterSet p0 = random_params(rng, DType::f64);
    const ParameterSet sets[] = {p0, random_like(rng, p0), random_like(rng, p0)};
    std::uniform_real_distribution<double> u(-2, 2);
    const double w[] = {u(rng), u(rng), u(rng)};
    const double v[] = {u(rng), u(rng), u(rng)};
    const double wv[] = {w[0] + v[0], w[1] + v[1], w[2] + v[2]};
    const ParameterSet lhs = axpy(1.0, weighted_sum(sets, w), weighted_sum(sets, v));
    CHECK(apfl::testing::max_abs_diff(lhs, weighted_sum(sets, wv)) <= 1e-12);
  }
}

TEST_CASE("weighted_sum errors") {
  const ParameterSet a = scalar_set("a", {1.0});
  const ParameterSet b = scalar_set("b", {1.0});
  const ParameterSet c = scalar_set("a", {1.0, 2.0});
  const double w2[] = {0.5, 0.5};
  const double w1[] = {1.0};
  const ParameterSet ab[] = {a, b};
  const ParameterSet ac[] = {a, c};
  CHECK_THROWS_AS(weighted_sum(ab, w2), Error);
  try {
    weighted_sum(ac, w2);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::shape_mismatch);
  }
  try {
    weighted_sum(ab, w1);
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::length_mismatch);
  }
}

TEST_CASE("axpy examples") {
  std::mt19937_64 rng(3);
  const ParameterSet x = random_params(rng, DType::f64);
  const ParameterSet y = random_like(rng, x);
  CHECK(axpy(0.0, x, y) == y);
  CHECK(axpy(1.0, x, zeros_like(x)) == x);
  const ParameterSet z = axpy(-1.0, x, x);
  CHECK(norms(z).linf == 0.0);
  CHECK_THROWS_AS(axpy(1.0, x, scalar_set("q", {1.0})), Error);
}

TEST_CASE("serialize: a 1x1 fully connected layer holds 8 data bytes") {
  ParameterSet fc;
  fc.add("weight", Tensor(DType::f32, {1, 1}));
  fc.add("bias", Tensor(DType::f32, {1}));
  CHECK(fc.num_elements() == 2);
  const Bytes b = serialize_params(fc);
  std::size_t data_bytes = 0;
  for (const auto& e : fc) data_bytes += e.tensor.byte_size();
  CHECK(data_bytes == 8);
  CHECK(b.size() == serialized_size(fc));
}

TEST_CASE("serialize: empty set is the 4-byte count") {
  const Bytes b = serialize_params(ParameterSet{});
  CHECK(b == Bytes{0, 0, 0, 0});
}

TEST_CASE("serialize: golden bytes") {
  ParameterSet p;
  p.add("w", Tensor::from_values(DType::f32, {2}, std::vector<double>{1.0, -2.0}));
  p.add("s", Tensor::from_values(DType::f64, {}, std::vector<double>{0.5}));
  const Bytes expect = {
      0x00, 0x00, 0x00, 0x02,                          // entry count
      0x00, 0x01, 'w', 0x00, 0x01, 0x00, 0x00, 0x00, 0x02,  // name, f32, ndim 1, dim 2
      0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0,  // 1.0f, -2.0f little-endian
      0x00, 0x01, 's', 0x01, 0x00,                     // name, f64, scalar
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xE0, 0x3F,  // 0.5 little-endian
  };
  CHECK(serialize_params(p) == expect);
}

TEST_CASE("serialize: round trip and size law over random sets") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> entries(0, 5);
    const ParameterSet p = random_params(rng, trial % 2 ? DType::f32 : DType::f64, entries(rng));
    const Bytes b = serialize_params(p);
    std::size_t law = 4;
    for (const auto& e : p) law += 2 + e.name.size() + 2 + 4 * e.tensor.shape().size() + dtype_size(e.tensor.dtype()) * e.tensor.size();
    CHECK(b.size() == law);
    const ParameterSet back = deserialize_params(b);
    CHECK(back == p);
    CHECK(serialize_params(back) == b);
  }
}

TEST_CASE("deserialize errors") {
  ParameterSet p;
  p.add("w", Tensor::from_values(DType::f32, {2}, std::vector<double>{1.0, 2.0}));
  const Bytes good = serialize_params(p);

  auto code_of = [](const Bytes& b) {
    try {
      deserialize_params(b);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::ok;
  };
  Bytes truncated(good.begin(), good.end() - 1);
  CHECK(code_of(truncated) == Errc::truncated);
  Bytes bad_tag = good;
  bad_tag[7] = 7;  // dtype tag follows the 1-byte name
  CHECK(code_of(bad_tag) == Errc::bad_dtype_tag);
  Bytes trailing = good;
  trailing.push_back(0);
  CHECK(code_of(trailing) == Errc::trailing_bytes);
  CHECK(code_of(Bytes{0, 0}) == Errc::truncated);
}

TEST_CASE("serialize rejects names above 65535 bytes") {
  ParameterSet p;
  p.add(std::string(70000, 'x'), Tensor(DType::f32, {1}));
  try {
    serialize_params(p);
    FAIL("expected NameTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::name_too_long);
  }
}

TEST_CASE("norms") {
  CHECK(norms(zeros_like(scalar_set("a", {0, 0, 0}))).l1 == 0.0);
  const Norms n = norms(scalar_set("a", {3.0, -4.0}));
  CHECK(n.l1 == 7.0);
  CHECK(n.l2 == 5.0);
  CHECK(n.linf == 4.0);

  std::mt19937_64 rng(9);
  const ParameterSet p = random_params(rng, DType::f64, 4);
  double l1 = 0, sq = 0, inf = 0;
  for (const auto& e : p)
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      const double v = e.tensor.get(i);
      l1 += std::abs(v);
      sq += v * v;
      inf = std::max(inf, std::abs(v));
    }
  const Norms got = norms(p);
  CHECK(std::abs(got.l1 - l1) <= 1e-12);
  CHECK(std::abs(got.l2 - std::sqrt(sq)) <= 1e-12);
  CHECK(got.linf == inf);
}

TEST_CASE("checkpoint file round trip") {
  std::mt19937_64 rng(2);
  const ParameterSet p = random_params(rng, DType::f32);
  const auto path = std::filesystem::temp_directory_path() / "apfl_test_ckpt" / "model.apfm";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path) == p);
  std::filesystem::remove_all(path.parent_path());
}

TEST_CASE("duplicate names are rejected") {
  ParameterSet p;
  p.add("a", Tensor());
  CHECK_THROWS_AS(p.add("a", Tensor()), Error);
}
