// SPDX-License-Identifier: Apache-2.0
#include "lorahub/tensor.hpp"

#include <cmath>
#include <cstdlib>

#include "lorahub/errors.hpp"

namespace lorahub {

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) {
    throw ShapeError("matrix dims must be positive, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  data_.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw ShapeError("from_rows: ragged row lengths");
    }
    int j = 0;
    for (double v : row) m.at(i, j++) = v;
    ++i;
  }
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dims differ, a is " + a.shape_str() + ", b is " +
                     b.shape_str());
  }
  Matrix c(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  // (i, l, j) loop order keeps the b and c accesses on contiguous rows.
  for (int i = 0; i < n; ++i) {
    double* crow = &c.at(i, 0);
    for (int l = 0; l < k; ++l) {
      const double ail = a.at(i, l);
      const double* brow = &b.at(l, 0);
      for (int j = 0; j < m; ++j) crow[j] += ail * brow[j];
    }
  }
  return c;
}

Matrix axpy(double alpha, const Matrix& x, const Matrix& y) {
  if (!x.same_shape(y)) {
    throw ShapeError("axpy: shapes differ, x is " + x.shape_str() + ", y is " + y.shape_str());
  }
  Matrix out = y;
  auto dst = out.data();
  auto src = x.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

Matrix scaled(double alpha, const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v *= alpha;
  return out;
}

void add_scaled(Matrix& dst, double alpha, const Matrix& m) {
  if (!dst.same_shape(m)) {
    throw ShapeError("add_scaled: shapes differ, dst is " + dst.shape_str() + ", m is " +
                     m.shape_str());
  }
  auto d = dst.data();
  auto s = m.data();
  for (size_t i = 0; i < d.size(); ++i) d[i] += alpha * s[i];
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: shapes differ, a is " + a.shape_str() + ", b is " +
                     b.shape_str());
  }
  double m = 0.0;
  auto pa = a.data();
  auto pb = b.data();
  for (size_t i = 0; i < pa.size(); ++i) m = std::max(m, std::abs(pa[i] - pb[i]));
  return m;
}

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Acklam's rational approximation to the inverse normal CDF,
// relative error below 1.15e-9 over (0, 1).
double inverse_normal_cdf(double p) {
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  static const double p_low = 0.02425;
  static const double p_high = 1.0 - p_low;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > p_high) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  do {
    state_ = splitmix64(x);
  } while (state_ == 0);
}

uint64_t Rng::next_u64() {
  uint64_t s = state_;
  s ^= s >> 12;
  s ^= s << 25;
  s ^= s >> 27;
  state_ = s;
  return s * 0x2545F4914F6CDD1Dull;
}

double Rng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::next_gaussian() {
  // u in (0, 1), strictly: the half-step keeps us away from both endpoints.
  const double u = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  return inverse_normal_cdf(u);
}

int Rng::next_below(int n) {
  if (n < 1) throw ShapeError("next_below: n must be >= 1, got " + std::to_string(n));
  const uint64_t bound = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % bound);
}

uint64_t seed_mix(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9E3779B97F4A7C15ull * (b + 1);
  return splitmix64(x);
}

Matrix gaussian_matrix(Rng& rng, int rows, int cols, double std_dev) {
  if (std_dev < 0.0) throw ShapeError("gaussian_matrix: std_dev must be >= 0");
  Matrix m(rows, cols);
  if (std_dev == 0.0) return m;
  for (double& v : m.data()) v = std_dev * rng.next_gaussian();
  return m;
}

}  // namespace lorahub
