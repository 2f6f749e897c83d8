// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major linear algebra, activations and a portable seeded RNG.
// Everything here is templated on the scalar type: float is the working
// precision, double is used by the finite-difference gradient checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bifocal {

/// Raised when operand shapes disagree. The message names both dimensions.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::string_view what, std::size_t expected, std::size_t actual)
      : std::invalid_argument(std::string(what) + ": expected dimension " +
                              std::to_string(expected) + ", got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

inline void require_dim(std::string_view what, std::size_t expected, std::size_t actual) {
  if (expected != actual) throw DimensionError(what, expected, actual);
}

template <typename T>
using Vector = std::vector<T>;

template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require_dim("Matrix data length", rows * cols, data_.size());
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      require_dim("Matrix::from_rows row length", c, row.size());
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename U, typename T>
Vector<U> cast_vector(std::span<const T> v) {
  return Vector<U>(v.begin(), v.end());
}

template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// y += W x
template <typename T>
void matvec_accumulate(const Matrix<T>& w, std::span<const T> x, std::span<T> y) {
  require_dim("matvec input", w.cols(), x.size());
  require_dim("matvec output", w.rows(), y.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const T* row = w.row(r).data();
    T acc{0};
    for (std::size_t c = 0; c < w.cols(); ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

/// y += W^T g
template <typename T>
void matvec_transposed_accumulate(const Matrix<T>& w, std::span<const T> g, std::span<T> y) {
  require_dim("transposed matvec input", w.rows(), g.size());
  require_dim("transposed matvec output", w.cols(), y.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const T gr = g[r];
    if (gr == T{0}) continue;
    const T* row = w.row(r).data();
    for (std::size_t c = 0; c < w.cols(); ++c) y[c] += row[c] * gr;
  }
}

/// G += a b^T
template <typename T>
void outer_accumulate(Matrix<T>& g, std::span<const T> a, std::span<const T> b) {
  require_dim("outer product rows", g.rows(), a.size());
  require_dim("outer product cols", g.cols(), b.size());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const T ar = a[r];
    if (ar == T{0}) continue;
    T* row = g.row(r).data();
    for (std::size_t c = 0; c < g.cols(); ++c) row[c] += ar * b[c];
  }
}

template <typename T>
Vector<T> matvec(const Matrix<T>& w, std::span<const T> x) {
  Vector<T> y(w.rows(), T{0});
  matvec_accumulate(w, x, std::span<T>(y));
  return y;
}

/// W x (+ b). Bias may be empty.
template <typename T>
Vector<T> affine(const Matrix<T>& w, std::span<const T> x, std::span<const T> b = {}) {
  require_dim("affine input", w.cols(), x.size());
  Vector<T> y;
  if (b.empty()) {
    y.assign(w.rows(), T{0});
  } else {
    require_dim("affine bias", w.rows(), b.size());
    y.assign(b.begin(), b.end());
  }
  matvec_accumulate(w, x, std::span<T>(y));
  return y;
}

template <typename T>
void add_into(std::span<T> y, std::span<const T> x) {
  require_dim("add_into", y.size(), x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Vector<T> sigmoid(std::span<const T> x) {
  Vector<T> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](T v) { return sigmoid(v); });
  return y;
}

template <typename T>
Vector<T> tanh(std::span<const T> x) {
  Vector<T> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](T v) { return std::tanh(v); });
  return y;
}

template <typename T>
T log_sum_exp(T a, T b) {
  if (a == -std::numeric_limits<T>::infinity()) return b;
  if (b == -std::numeric_limits<T>::infinity()) return a;
  const T m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

template <typename T>
T log_sum_exp(std::span<const T> x) {
  if (x.empty()) return -std::numeric_limits<T>::infinity();
  const T m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  T sum{0};
  for (T v : x) sum += std::exp(v - m);
  return m + std::log(sum);
}

template <typename T>
Vector<T> log_softmax(std::span<const T> x) {
  const T lse = log_sum_exp(x);
  Vector<T> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [lse](T v) { return v - lse; });
  return y;
}

/// Max-subtracted softmax.
template <typename T>
Vector<T> softmax(std::span<const T> x) {
  Vector<T> y(x.size());
  if (x.empty()) return y;
  const T m = *std::max_element(x.begin(), x.end());
  T sum{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    sum += y[i];
  }
  for (T& v : y) v /= sum;
  return y;
}

/// Seeded generator with platform-independent draws.
///
/// std::mt19937_64 output is fixed by the standard; the standard
/// distributions are not, so the conversions to real values are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Derives an independent child stream, e.g. per utterance index.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Uniform in +-sqrt(6 / (rows + cols)).
template <typename T>
Matrix<T> glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("glorot_init: rows and cols must be >= 1");
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<T> m(rows, cols);
  for (T& v : m.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  return m;
}

/// Named view over one parameter tensor; used by optimizers, checkpoints and
/// gradient checks. A vector is a (n x 1) tensor.
template <typename T>
struct TensorRef {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<T> data;
};

template <typename T>
TensorRef<T> tensor_ref(std::string name, Matrix<T>& m) {
  return {std::move(name), m.rows(), m.cols(), m.data()};
}

template <typename T>
TensorRef<T> tensor_ref(std::string name, Vector<T>& v) {
  return {std::move(name), v.size(), 1, std::span<T>(v)};
}

template <typename T>
TensorRef<const T> tensor_ref(std::string name, const Matrix<T>& m) {
  return {std::move(name), m.rows(), m.cols(), m.data()};
}

template <typename T>
TensorRef<const T> tensor_ref(std::string name, const Vector<T>& v) {
  return {std::move(name), v.size(), 1, std::span<const T>(v)};
}

template <typename T>
void prefix_names(std::vector<TensorRef<T>>& refs, std::string_view prefix) {
  for (auto& r : refs) r.name = std::string(prefix) + r.name;
}

template <typename T>
void append(std::vector<TensorRef<T>>& dst, std::vector<TensorRef<T>> src, std::string_view prefix = {}) {
  prefix_names(src, prefix);
  for (auto& r : src) dst.push_back(std::move(r));
}

template <typename T>
std::size_t total_size(const std::vector<TensorRef<T>>& refs) {
  std::size_t n = 0;
  for (const auto& r : refs) n += r.data.size();
  return n;
}

}  // namespace bifocal
