// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace lorahub {

/// Dense row-major matrix of 64-bit floats. Treated as immutable once shared;
/// mutation is confined to construction sites.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);  // zero-filled
  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
  static Matrix identity(int n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  double& at(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
  const double& at(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const Matrix& o) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// c[i][j] = sum_l a[i][l] * b[l][j]. Throws ShapeError naming both shapes.
Matrix matmul(const Matrix& a, const Matrix& b);

/// alpha*x + y elementwise. Throws ShapeError on shape mismatch.
Matrix axpy(double alpha, const Matrix& x, const Matrix& y);

Matrix transpose(const Matrix& m);
Matrix scaled(double alpha, const Matrix& m);
void add_scaled(Matrix& dst, double alpha, const Matrix& m);  // dst += alpha*m
double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Deterministic seedable PRNG; the single source of randomness in the repo.
///
/// State update (xorshift64*, Marsaglia/Vigna):
///   s ^= s >> 12;  s ^= s << 25;  s ^= s >> 27;  output = s * 0x2545F4914F6CDD1D
/// The seed is passed through splitmix64 so any 64-bit seed (including 0)
/// yields a valid nonzero state. Identical seeds give identical streams.
///
/// Uniform doubles take the top 53 bits of the output. Gaussians use the
/// rational inverse-normal-CDF approximation (Acklam), which needs only
/// +,-,*,/ and sqrt in the central 95.15% region, so the stream is one
/// uniform draw per gaussian with no cached state.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double next_double();
  /// Standard normal.
  double next_gaussian();
  /// Uniform integer in [0, n), unbiased (rejection sampling). n >= 1.
  int next_below(int n);

 private:
  uint64_t state_;
};

/// Deterministic combiner for deriving independent seed streams.
uint64_t seed_mix(uint64_t a, uint64_t b);

/// i.i.d. Normal(0, std_dev^2) entries, deterministic under the rng state.
/// Throws ShapeError on non-positive dims, std_dev must be >= 0.
Matrix gaussian_matrix(Rng& rng, int rows, int cols, double std_dev);

}  // namespace lorahub
