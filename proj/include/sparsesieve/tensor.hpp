#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsesieve {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major float64 tensor. The substrate for images, perturbations,
/// mask weights, and model parameters.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape s, double v) {
    std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor vector(std::initializer_list<double> v) {
    return Tensor({v.size()}, std::vector<double>(v));
  }

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

inline void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite())
    throw std::runtime_error(std::string(where) + ": non-finite value");
}

/// Elementwise helpers used outside the autodiff tape.
inline Tensor map(const Tensor& t, const std::function<double(double)>& f) {
  Tensor out = t;
  for (auto& v : out.data) v = f(v);
  return out;
}

inline Tensor zip(const Tensor& a, const Tensor& b, const std::function<double(double, double)>& f,
                  const char* op = "zip") {
  require_same_shape(a, b, op);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x + y; }, "add");
}
inline Tensor operator-(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x - y; }, "sub");
}
inline Tensor operator*(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x * y; }, "mul");
}
inline Tensor operator*(double c, const Tensor& a) {
  return map(a, [c](double x) { return c * x; });
}

/// Elementwise sign with sign(0) = 0.
inline Tensor sign(const Tensor& t) {
  return map(t, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor clamp(const Tensor& t, double lo, double hi) {
  return map(t, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); });
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::abs(v));
  return m;
}

inline std::size_t count_nonzero(const Tensor& t) {
  return static_cast<std::size_t>(
      std::count_if(t.data.begin(), t.data.end(), [](double v) { return v != 0.0; }));
}

/// Deterministic uniform fill in [lo, hi).
inline void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
}

inline std::size_t argmax_lowest(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t.data[i] > t.data[best]) best = i;
  return best;
}

inline std::size_t argmin_lowest(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t.data[i] < t.data[best]) best = i;
  return best;
}

}  // namespace sparsesieve
