#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "apfl/core/bytes.hpp"

namespace apfl {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }
std::string_view dtype_name(DType d);
DType parse_dtype(std::string_view name);

using Shape = std::vector<std::uint32_t>;

std::size_t shape_elements(const Shape& shape);

/// Dense row-major tensor. A scalar has an empty shape and one element.
///
/// Elements are stored in their declared dtype; arithmetic helpers compute in
/// double and round once on store.
class Tensor {
 public:
  Tensor() : Tensor(DType::f32, Shape{}) {}
  Tensor(DType dtype, Shape shape);

  static Tensor from_values(DType dtype, Shape shape, std::span<const double> values);

  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const;
  std::size_t byte_size() const { return size() * dtype_size(dtype_); }

  double get(std::size_t i) const;
  void set(std::size_t i, double v);

  std::span<const float> f32() const { return std::get<std::vector<float>>(data_); }
  std::span<float> f32() { return std::get<std::vector<float>>(data_); }
  std::span<const double> f64() const { return std::get<std::vector<double>>(data_); }
  std::span<double> f64() { return std::get<std::vector<double>>(data_); }

  std::vector<double> to_f64() const;

  template <typename Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit([&](const auto& v) { return fn(std::span(v)); }, data_);
  }
  template <typename Fn>
  decltype(auto) visit(Fn&& fn) {
    return std::visit([&](auto& v) { return fn(std::span(v)); }, data_);
  }

  bool same_layout(const Tensor& other) const { return dtype_ == other.dtype_ && shape_ == other.shape_; }

  // Bitwise equality of the element buffers.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  DType dtype_;
  Shape shape_;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  ParameterSet() = default;

  void add(std::string name, Tensor tensor);

  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor* find(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t num_elements() const;

  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Same names, order, dtypes and shapes.
  bool compatible_with(const ParameterSet& other) const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }
  friend bool operator==(const Entry& a, const Entry& b) { return a.name == b.name && a.tensor == b.tensor; }

 private:
  std::vector<Entry> entries_;
};

void require_compatible(const ParameterSet& a, const ParameterSet& b, std::string_view context);

ParameterSet zeros_like(const ParameterSet& p);

ParameterSet weighted_sum(std::span<const ParameterSet* const> sets, std::span<const double> weights);
ParameterSet weighted_sum(std::span<const ParameterSet> sets, std::span<const double> weights);

/// alpha * x + y
ParameterSet axpy(double alpha, const ParameterSet& x, const ParameterSet& y);
ParameterSet subtract(const ParameterSet& a, const ParameterSet& b);
ParameterSet scale(const ParameterSet& p, double s);

ParameterSet map_elements(const ParameterSet& p, const std::function<double(double)>& fn);
ParameterSet zip_elements(const ParameterSet& a, const ParameterSet& b,
                          const std::function<double(double, double)>& fn);

struct Norms {
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
};

Norms norms(const ParameterSet& p);

/// Concatenation of all elements in entry order.
std::vector<double> flatten(const ParameterSet& p);

/// Byte length serialize_params would produce, without materializing it.
std::size_t serialized_size(const ParameterSet& p);
Bytes serialize_params(const ParameterSet& p);
ParameterSet deserialize_params(ByteView bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& p);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace apfl
