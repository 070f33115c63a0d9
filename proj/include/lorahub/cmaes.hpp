// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lorahub/tensor.hpp"

namespace lorahub {

struct CmaesConfig {
  int dim = 0;
  std::vector<double> initial_mean;  // empty -> all zeros
  double initial_sigma = 0.5;
  int lambda = 0;  // 0 -> 4 + floor(3 ln n)
  int mu = 0;      // 0 -> lambda / 2
  double bound = 1.5;
  int budget = 40;  // max objective evaluations, total
  uint64_t seed = 0;
};

struct CmaesState {
  std::vector<double> mean;
  double sigma = 0.0;
  Matrix cov;  // symmetric positive-definite n x n
  std::vector<double> p_sigma;
  std::vector<double> p_c;
  int generation = 0;
  int evals_used = 0;
  std::vector<double> best_point;
  double best_value = std::numeric_limits<double>::infinity();
};

/// Covariance Matrix Adaptation Evolution Strategy with coordinatewise box
/// clipping and a hard evaluation budget, driven through an ask/tell
/// protocol.
///
/// tell() performs the standard update: log-rank recombination of the mu
/// best points, cumulative step-size adaptation of sigma via p_sigma, and
/// the rank-one plus rank-mu covariance update via p_c. Points are ranked
/// by (value, lexicographic point) so a joint permutation of (points,
/// values) cannot change the outcome. When the final generation is
/// truncated to fit the budget, only the mean and incumbent are updated.
class CmaesOptimizer {
 public:
  explicit CmaesOptimizer(const CmaesConfig& config);

  /// Samples min(lambda, budget - evals_used) points: mean + sigma*B*D*z,
  /// clipped into [-bound, bound]. Throws BudgetExhaustedError once the
  /// budget is spent.
  std::vector<std::vector<double>> ask(Rng& rng);

  /// Feeds back objective values for the latest ask (any joint order).
  void tell(const std::vector<std::vector<double>>& points, const std::vector<double>& values);

  const CmaesState& state() const { return state_; }
  const CmaesConfig& config() const { return config_; }  // resolved defaults
  bool budget_exhausted() const { return state_.evals_used >= config_.budget; }

 private:
  void decompose();  // refresh eigvecs_/eigvals_ from state_.cov, repairing if needed

  CmaesConfig config_;
  CmaesState state_;

  // strategy constants, fixed at construction
  std::vector<double> weights_;  // mu recombination weights, sum 1
  double mu_eff_ = 0.0;
  double c_sigma_ = 0.0, d_sigma_ = 0.0, c_c_ = 0.0, c1_ = 0.0, c_mu_ = 0.0;
  double chi_n_ = 0.0;

  // eigen cache of state_.cov (valid between tell and the next ask)
  Matrix eigvecs_;
  std::vector<double> eigvals_;

  bool pending_ = false;
  int pending_count_ = 0;
};

struct EvalRecord {
  std::vector<double> point;
  double value = 0.0;
};

struct MinimizeResult {
  std::vector<double> best_point;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<EvalRecord> history;  // one entry per evaluation, in order
  std::vector<std::string> warnings;
};

using Objective = std::function<double(std::span<const double>)>;

/// Runs exactly config.budget objective evaluations. NaN objective values
/// are replaced by +infinity with a recorded warning; the run continues.
/// best_point is the argmin over all evaluated points, not the final mean.
MinimizeResult minimize(const Objective& objective, const CmaesConfig& config, Rng& rng);
inline MinimizeResult minimize(const Objective& objective, const CmaesConfig& config) {
  Rng rng(config.seed);
  return minimize(objective, config, rng);
}

namespace detail {
/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Columns of eigvecs are orthonormal eigenvectors; m = V diag(vals) V^T.
void eigen_symmetric(const Matrix& m, Matrix& eigvecs, std::vector<double>& eigvals);
}  // namespace detail

}  // namespace lorahub
