#include "apfl/core/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace apfl {

std::string_view dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32" || name == "float32") return DType::f32;
  if (name == "f64" || name == "float64") return DType::f64;
  fail(Errc::invalid_argument, "unknown dtype '" + std::string(name) + "'");
}

std::size_t shape_elements(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) fail(Errc::invalid_argument, "shape entries must be >= 1");
    n *= d;
  }
  return n;
}

Tensor::Tensor(DType dtype, Shape shape) : dtype_(dtype), shape_(std::move(shape)) {
  const std::size_t n = shape_elements(shape_);
  if (dtype_ == DType::f32)
    data_ = std::vector<float>(n, 0.0f);
  else
    data_ = std::vector<double>(n, 0.0);
}

Tensor Tensor::from_values(DType dtype, Shape shape, std::span<const double> values) {
  Tensor t(dtype, std::move(shape));
  if (values.size() != t.size())
    fail(Errc::length_mismatch, "tensor expects " + std::to_string(t.size()) + " values, got " +
                                    std::to_string(values.size()));
  t.visit([&](auto dst) {
    using T = typename decltype(dst)::value_type;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
  });
  return t;
}

std::size_t Tensor::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Tensor::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

void Tensor::set(std::size_t i, double value) {
  std::visit([&](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             data_);
}

std::vector<double> Tensor::to_f64() const {
  return visit([](auto src) { return std::vector<double>(src.begin(), src.end()); });
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (!a.same_layout(b)) return false;
  return a.visit([&](auto sa) {
    using T = typename decltype(sa)::value_type;
    const auto& vb = std::get<std::vector<std::remove_const_t<T>>>(b.data_);
    return sa.empty() || std::memcmp(sa.data(), vb.data(), sa.size_bytes()) == 0;
  });
}

void ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name) != nullptr) fail(Errc::invalid_argument, "duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor* ParameterSet::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  fail(Errc::shape_mismatch, "missing parameter '" + std::string(name) + "'");
}

Tensor& ParameterSet::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).at(name));
}

std::size_t ParameterSet::num_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

bool ParameterSet::compatible_with(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].tensor.same_layout(other.entries_[i].tensor)) return false;
  }
  return true;
}

void require_compatible(const ParameterSet& a, const ParameterSet& b, std::string_view context) {
  if (!a.compatible_with(b)) fail(Errc::shape_mismatch, std::string(context) + ": parameter sets are not shape-compatible");
}

ParameterSet zeros_like(const ParameterSet& p) {
  ParameterSet out;
  for (const auto& e : p) out.add(e.name, Tensor(e.tensor.dtype(), e.tensor.shape()));
  return out;
}

ParameterSet weighted_sum(std::span<const ParameterSet* const> sets, std::span<const double> weights) {
  if (sets.size() != weights.size())
    fail(Errc::length_mismatch, std::to_string(weights.size()) + " weights for " + std::to_string(sets.size()) + " sets");
  if (sets.empty()) fail(Errc::length_mismatch, "weighted_sum of zero sets");
  for (double w : weights)
    if (!std::isfinite(w)) fail(Errc::invalid_argument, "weights must be finite");
  for (std::size_t k = 1; k < sets.size(); ++k) require_compatible(*sets[0], *sets[k], "weighted_sum");

  ParameterSet out = zeros_like(*sets[0]);
  for (std::size_t e = 0; e < out.size(); ++e) {
    Tensor& dst = out[e].tensor;
    const std::size_t n = dst.size();
    std::vector<double> acc(n, 0.0);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const double w = weights[k];
      (*sets[k])[e].tensor.visit([&](auto src) {
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * static_cast<double>(src[i]);
      });
    }
    dst.visit([&](auto d) {
      using T = typename decltype(d)::value_type;
      for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<T>(acc[i]);
    });
  }
  return out;
}

ParameterSet weighted_sum(std::span<const ParameterSet> sets, std::span<const double> weights) {
  std::vector<const ParameterSet*> ptrs;
  ptrs.reserve(sets.size());
  for (const auto& s : sets) ptrs.push_back(&s);
  return weighted_sum(std::span<const ParameterSet* const>(ptrs), weights);
}

ParameterSet zip_elements(const ParameterSet& a, const ParameterSet& b,
                          const std::function<double(double, double)>& fn) {
  require_compatible(a, b, "elementwise");
  ParameterSet out = a;
  for (std::size_t e = 0; e < out.size(); ++e) {
    Tensor& dst = out[e].tensor;
    const Tensor& rhs = b[e].tensor;
    for (std::size_t i = 0; i < dst.size(); ++i) dst.set(i, fn(dst.get(i), rhs.get(i)));
  }
  return out;
}

ParameterSet map_elements(const ParameterSet& p, const std::function<double(double)>& fn) {
  ParameterSet out = p;
  for (auto& e : out) {
    e.tensor.visit([&](auto d) {
      using T = typename decltype(d)::value_type;
      for (auto& x : d) x = static_cast<T>(fn(static_cast<double>(x)));
    });
  }
  return out;
}

ParameterSet axpy(double alpha, const ParameterSet& x, const ParameterSet& y) {
  return zip_elements(x, y, [alpha](double xi, double yi) { return alpha * xi + yi; });
}

ParameterSet subtract(const ParameterSet& a, const ParameterSet& b) {
  return zip_elements(a, b, [](double x, double y) { return x - y; });
}

ParameterSet scale(const ParameterSet& p, double s) {
  return map_elements(p, [s](double x) { return s * x; });
}

Norms norms(const ParameterSet& p) {
  Norms n;
  double sq = 0.0;
  for (const auto& e : p) {
    e.tensor.visit([&](auto src) {
      for (auto v : src) {
        const double a = std::abs(static_cast<double>(v));
        n.l1 += a;
        sq += a * a;
        n.linf = std::max(n.linf, a);
      }
    });
  }
  n.l2 = std::sqrt(sq);
  return n;
}

std::vector<double> flatten(const ParameterSet& p) {
  std::vector<double> out;
  out.reserve(p.num_elements());
  for (const auto& e : p) e.tensor.visit([&](auto src) { out.insert(out.end(), src.begin(), src.end()); });
  return out;
}

namespace {

constexpr std::size_t kMaxName = std::numeric_limits<std::uint16_t>::max();

void check_entry(const ParameterSet::Entry& e) {
  if (e.name.size() > kMaxName)
    fail(Errc::name_too_long, "parameter name of " + std::to_string(e.name.size()) + " bytes");
  if (e.tensor.shape().size() > 255) fail(Errc::invalid_argument, "tensor rank above 255");
}

}  // namespace

std::size_t serialized_size(const ParameterSet& p) {
  std::size_t n = 4;
  for (const auto& e : p) n += 2 + e.name.size() + 1 + 1 + 4 * e.tensor.shape().size() + e.tensor.byte_size();
  return n;
}

Bytes serialize_params(const ParameterSet& p) {
  for (const auto& e : p) check_entry(e);
  Bytes out;
  out.reserve(serialized_size(p));
  ByteWriter w(out);
  w.u32be(static_cast<std::uint32_t>(p.size()));
  for (const auto& e : p) {
    w.u16be(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name);
    w.u8(static_cast<std::uint8_t>(e.tensor.dtype()));
    w.u8(static_cast<std::uint8_t>(e.tensor.shape().size()));
    for (auto d : e.tensor.shape()) w.u32be(d);
    e.tensor.visit([&](auto src) { w.elements_le(std::span<const typename decltype(src)::value_type>(src)); });
  }
  return out;
}

ParameterSet deserialize_params(ByteView bytes) {
  ByteReader r(bytes);
  const std::uint32_t count = r.u32be();
  ParameterSet p;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t name_len = r.u16be();
    std::string name = r.str(name_len);
    const std::uint8_t tag = r.u8();
    if (tag > 1) fail(Errc::bad_dtype_tag, "dtype tag " + std::to_string(tag));
    const std::uint8_t ndim = r.u8();
    Shape shape(ndim);
    std::size_t elems = 1;
    for (auto& d : shape) {
      d = r.u32be();
      if (d == 0) fail(Errc::truncated, "zero dimension in '" + name + "'");
      elems *= d;
    }
    const auto dtype = static_cast<DType>(tag);
    if (elems > r.remaining() / dtype_size(dtype))
      fail(Errc::truncated, "tensor '" + name + "' declares more data than available");
    Tensor t(dtype, std::move(shape));
    t.visit([&](auto dst) { r.elements_le(dst); });
    p.add(std::move(name), std::move(t));
  }
  if (!r.done()) fail(Errc::trailing_bytes, std::to_string(r.remaining()) + " bytes after last entry");
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const Bytes bytes = serialize_params(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io_error, "short write to " + path.string());
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot read " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace apfl
