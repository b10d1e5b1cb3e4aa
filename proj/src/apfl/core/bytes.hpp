#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apfl/error.hpp"

namespace apfl {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// Header integers are big-endian; bulk element payloads are little-endian.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16be(std::uint16_t v) { put_be(v, 2); }
  void u32be(std::uint32_t v) { put_be(v, 4); }
  void u64be(std::uint64_t v) { put_be(v, 8); }
  void f64be(double v) { u64be(std::bit_cast<std::uint64_t>(v)); }
  void raw(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { raw(as_bytes(s)); }

  template <typename T>
  void elements_le(std::span<const T> values) {
    const std::size_t start = out_.size();
    out_.resize(start + values.size_bytes());
    if constexpr (std::endian::native == std::endian::little) {
      if (!values.empty()) std::memcpy(out_.data() + start, values.data(), values.size_bytes());
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = to_bits(values[i]);
        for (std::size_t b = 0; b < sizeof(T); ++b)
          out_[start + i * sizeof(T) + b] = static_cast<std::uint8_t>(bits >> (8 * b));
      }
    }
  }

  std::size_t size() const { return out_.size(); }

 private:
  void put_be(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  static std::uint32_t to_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
  static std::uint64_t to_bits(double d) { return std::bit_cast<std::uint64_t>(d); }

  Bytes& out_;
};

// Every read is bounds-checked; running off the end throws `short_code`.
class ByteReader {
 public:
  explicit ByteReader(ByteView in, Errc short_code = Errc::truncated) : in_(in), short_(short_code) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_be(1)); }
  std::uint16_t u16be() { return static_cast<std::uint16_t>(get_be(2)); }
  std::uint32_t u32be() { return static_cast<std::uint32_t>(get_be(4)); }
  std::uint64_t u64be() { return get_be(8); }
  double f64be() { return std::bit_cast<double>(u64be()); }

  ByteView take(std::size_t n) {
    need(n);
    auto view = in_.subspan(pos_, n);
    pos_ += n;
    return view;
  }
  std::string str(std::size_t n) {
    auto v = take(n);
    return {reinterpret_cast<const char*>(v.data()), v.size()};
  }

  template <typename T>
  void elements_le(std::span<T> dst) {
    auto src = take(dst.size_bytes());
    if constexpr (std::endian::native == std::endian::little) {
      if (!dst.empty()) std::memcpy(dst.data(), src.data(), src.size());
    } else {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (std::size_t i = 0; i < dst.size(); ++i) {
        U bits = 0;
        for (std::size_t b = 0; b < sizeof(T); ++b) bits |= U(src[i * sizeof(T) + b]) << (8 * b);
        dst[i] = std::bit_cast<T>(bits);
      }
    }
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining())
      fail(short_, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                       ", have " + std::to_string(remaining()));
  }
  std::uint64_t get_be(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | in_[pos_ + static_cast<std::size_t>(i)];
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  ByteView in_;
  std::size_t pos_ = 0;
  Errc short_;
};

}  // namespace apfl
