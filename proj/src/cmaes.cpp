// SPDX-License-Identifier: Apache-2.0
#include "lorahub/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lorahub/errors.hpp"

namespace lorahub {

namespace detail {

void eigen_symmetric(const Matrix& m, Matrix& eigvecs, std::vector<double>& eigvals) {
  if (m.rows() != m.cols()) throw ShapeError("eigen_symmetric: matrix is " + m.shape_str());
  const int n = m.rows();
  Matrix a = m;
  eigvecs = Matrix::identity(n);

  double off = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
  double norm = frobenius_norm(a);
  const double tol = (norm > 0.0 ? norm : 1.0) * 1e-14;

  for (int sweep = 0; sweep < 128 && std::sqrt(2.0 * off) > tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double tau = (aqq - app) / (2.0 * apq);
        // smaller-magnitude root keeps rotations stable
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = eigvecs.at(k, p);
          const double vkq = eigvecs.at(k, q);
          eigvecs.at(k, p) = c * vkp - s * vkq;
          eigvecs.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
    off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
  }

  eigvals.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = a.at(i, i);
}

}  // namespace detail

namespace {

constexpr double kEigenFloor = 1e-14;

// (value, lexicographic point) ordering: permutation-proof ranking.
bool record_less(double va, std::span<const double> pa, double vb, std::span<const double> pb) {
  if (va != vb) return va < vb;
  return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
}

}  // namespace

CmaesOptimizer::CmaesOptimizer(const CmaesConfig& config) : config_(config) {
  const int n = config_.dim;
  if (n < 1) throw ShapeError("cmaes: dim must be >= 1");
  if (config_.initial_sigma <= 0.0) throw ShapeError("cmaes: initial_sigma must be > 0");
  if (config_.bound <= 0.0) throw ShapeError("cmaes: bound must be > 0");
  if (config_.budget < 1) throw ShapeError("cmaes: budget must be >= 1");

  if (config_.lambda <= 0) config_.lambda = 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
  if (config_.mu <= 0) config_.mu = config_.lambda / 2;
  if (config_.mu > config_.lambda) throw ShapeError("cmaes: mu must be <= lambda");

  if (config_.initial_mean.empty()) {
    config_.initial_mean.assign(static_cast<size_t>(n), 0.0);
  } else if (static_cast<int>(config_.initial_mean.size()) != n) {
    throw ArityError("cmaes: initial_mean has " + std::to_string(config_.initial_mean.size()) +
                     " entries for dim " + std::to_string(n));
  }

  state_.mean = config_.initial_mean;
  for (double& v : state_.mean) v = std::clamp(v, -config_.bound, config_.bound);
  state_.sigma = config_.initial_sigma;
  state_.cov = Matrix::identity(n);
  state_.p_sigma.assign(static_cast<size_t>(n), 0.0);
  state_.p_c.assign(static_cast<size_t>(n), 0.0);

  const int mu = config_.mu;
  weights_.resize(static_cast<size_t>(mu));
  double wsum = 0.0;
  for (int i = 0; i < mu; ++i) {
    weights_[static_cast<size_t>(i)] = std::log(mu + 0.5) - std::log(i + 1.0);
    wsum += weights_[static_cast<size_t>(i)];
  }
  double w2 = 0.0;
  for (double& w : weights_) {
    w /= wsum;
    w2 += w * w;
  }
  mu_eff_ = 1.0 / w2;

  c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
  d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
  c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
  c1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
  c_mu_ = std::min(1.0 - c1_,
                   2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) / ((n + 2.0) * (n + 2.0) + mu_eff_));
  chi_n_ = std::sqrt(static_cast<double>(n)) *
           (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * static_cast<double>(n) * n));

  decompose();
}

void CmaesOptimizer::decompose() {
  const int n = config_.dim;
  // Symmetrize before decomposing; drift is at roundoff level.
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = 0.5 * (state_.cov.at(i, j) + state_.cov.at(j, i));
      state_.cov.at(i, j) = v;
      state_.cov.at(j, i) = v;
    }
  }
  detail::eigen_symmetric(state_.cov, eigvecs_, eigvals_);
  bool repaired = false;
  for (double& ev : eigvals_) {
    if (ev < kEigenFloor) {
      ev = kEigenFloor;
      repaired = true;
    }
  }
  if (repaired) {
    // Rebuild cov = V diag(vals) V^T so the stored state is positive-definite.
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < n; ++k)
          s += eigvecs_.at(i, k) * eigvals_[static_cast<size_t>(k)] * eigvecs_.at(j, k);
        state_.cov.at(i, j) = s;
        state_.cov.at(j, i) = s;
      }
    }
  }
}

std::vector<std::vector<double>> CmaesOptimizer::ask(Rng& rng) {
  if (budget_exhausted()) {
    throw BudgetExhaustedError("cmaes: budget of " + std::to_string(config_.budget) +
                               " evaluations exhausted");
  }
  if (pending_) throw ProtocolError("cmaes: ask called twice without tell");
  const int n = config_.dim;
  const int count = std::min(config_.lambda, config_.budget - state_.evals_used);

  std::vector<std::vector<double>> points(static_cast<size_t>(count));
  std::vector<double> z(static_cast<size_t>(n));
  for (int k = 0; k < count; ++k) {
    for (double& v : z) v = rng.next_gaussian();
    std::vector<double> x(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      double yi = 0.0;
      for (int j = 0; j < n; ++j) {
        yi += eigvecs_.at(i, j) * std::sqrt(eigvals_[static_cast<size_t>(j)]) * z[static_cast<size_t>(j)];
      }
      x[static_cast<size_t>(i)] =
          std::clamp(state_.mean[static_cast<size_t>(i)] + state_.sigma * yi, -config_.bound,
                     config_.bound);
    }
    points[static_cast<size_t>(k)] = std::move(x);
  }
  pending_ = true;
  pending_count_ = count;
  return points;
}

void CmaesOptimizer::tell(const std::vector<std::vector<double>>& points,
                          const std::vector<double>& values) {
  if (!pending_) throw ProtocolError("cmaes: tell without a pending ask");
  if (points.size() != values.size() || static_cast<int>(points.size()) != pending_count_) {
    throw ArityError("cmaes: tell got " + std::to_string(points.size()) + " points / " +
                     std::to_string(values.size()) + " values, expected " +
                     std::to_string(pending_count_));
  }
  const int n = config_.dim;
  const int count = pending_count_;
  pending_ = false;
  pending_count_ = 0;

  state_.evals_used += count;
  state_.generation += 1;

  for (int k = 0; k < count; ++k) {
    if (state_.best_point.empty() ||
        record_less(values[static_cast<size_t>(k)], points[static_cast<size_t>(k)],
                    state_.best_value, state_.best_point)) {
      state_.best_value = values[static_cast<size_t>(k)];
      state_.best_point = points[static_cast<size_t>(k)];
    }
  }

  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return record_less(values[static_cast<size_t>(a)], points[static_cast<size_t>(a)],
                       values[static_cast<size_t>(b)], points[static_cast<size_t>(b)]);
  });

  const std::vector<double> old_mean = state_.mean;
  const bool full_generation = count == config_.lambda;

  // Recombination weights for this generation.
  const int k_used = std::min(config_.mu, count);
  std::vector<double> w(weights_.begin(), weights_.begin() + k_used);
  if (k_used < config_.mu) {
    double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& wi : w) wi /= s;
  }

  // y_w = sum_i w_i (x_i - m) / sigma over the k_used best points.
  std::vector<double> y_w(static_cast<size_t>(n), 0.0);
  for (int r = 0; r < k_used; ++r) {
    const std::vector<double>& x = points[static_cast<size_t>(order[static_cast<size_t>(r)])];
    for (int i = 0; i < n; ++i) {
      y_w[static_cast<size_t>(i)] +=
          w[static_cast<size_t>(r)] * (x[static_cast<size_t>(i)] - old_mean[static_cast<size_t>(i)]) / state_.sigma;
    }
  }
  for (int i = 0; i < n; ++i) {
    state_.mean[static_cast<size_t>(i)] = old_mean[static_cast<size_t>(i)] + state_.sigma * y_w[static_cast<size_t>(i)];
  }

  if (!full_generation) {
    // Truncated final generation: adapting sigma/C from an inconsistent
    // mu_eff is not meaningful, and the budget is spent right after.
    return;
  }

  // p_sigma update needs C^{-1/2} y_w = V D^{-1} V^T y_w.
  std::vector<double> tmp(static_cast<size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += eigvecs_.at(i, j) * y_w[static_cast<size_t>(i)];
    tmp[static_cast<size_t>(j)] = s / std::sqrt(eigvals_[static_cast<size_t>(j)]);
  }
  std::vector<double> c_inv_sqrt_yw(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += eigvecs_.at(i, j) * tmp[static_cast<size_t>(j)];
    c_inv_sqrt_yw[static_cast<size_t>(i)] = s;
  }

  const double cs_scale = std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_);
  double ps_norm2 = 0.0;
  for (int i = 0; i < n; ++i) {
    state_.p_sigma[static_cast<size_t>(i)] =
        (1.0 - c_sigma_) * state_.p_sigma[static_cast<size_t>(i)] + cs_scale * c_inv_sqrt_yw[static_cast<size_t>(i)];
    ps_norm2 += state_.p_sigma[static_cast<size_t>(i)] * state_.p_sigma[static_cast<size_t>(i)];
  }
  const double ps_norm = std::sqrt(ps_norm2);

  const double denom = std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * state_.generation));
  const bool h_sigma = ps_norm / denom / chi_n_ < 1.4 + 2.0 / (n + 1.0);

  const double cc_scale = std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_);
  for (int i = 0; i < n; ++i) {
    state_.p_c[static_cast<size_t>(i)] = (1.0 - c_c_) * state_.p_c[static_cast<size_t>(i)] +
                                         (h_sigma ? cc_scale * y_w[static_cast<size_t>(i)] : 0.0);
  }

  const double c1a = c1_ * (h_sigma ? 0.0 : c_c_ * (2.0 - c_c_));
  const double decay = 1.0 - c1_ - c_mu_;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double v = (decay + c1a) * state_.cov.at(i, j) +
                 c1_ * state_.p_c[static_cast<size_t>(i)] * state_.p_c[static_cast<size_t>(j)];
      for (int r = 0; r < k_used; ++r) {
        const std::vector<double>& x = points[static_cast<size_t>(order[static_cast<size_t>(r)])];
        const double yi = (x[static_cast<size_t>(i)] - old_mean[static_cast<size_t>(i)]) / state_.sigma;
        const double yj = (x[static_cast<size_t>(j)] - old_mean[static_cast<size_t>(j)]) / state_.sigma;
        v += c_mu_ * w[static_cast<size_t>(r)] * yi * yj;
      }
      state_.cov.at(i, j) = v;
      state_.cov.at(j, i) = v;
    }
  }

  // Cumulative step-size adaptation, exponent capped at 1.
  const double arg = std::min(1.0, (c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));
  state_.sigma *= std::exp(arg);

  decompose();
}

MinimizeResult minimize(const Objective& objective, const CmaesConfig& config, Rng& rng) {
  CmaesOptimizer opt(config);
  MinimizeResult result;
  while (!opt.budget_exhausted()) {
    const std::vector<std::vector<double>> points = opt.ask(rng);
    std::vector<double> values(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
      double v = objective(points[i]);
      if (std::isnan(v)) {
        result.warnings.push_back("objective returned NaN at evaluation " +
                                  std::to_string(result.history.size() + 1) +
                                  "; treating as +inf");
        v = std::numeric_limits<double>::infinity();
      }
      values[i] = v;
      result.history.push_back({points[i], v});
    }
    opt.tell(points, values);
  }
  result.best_point = opt.state().best_point;
  result.best_value = opt.state().best_value;
  return result;
}

}  // namespace lorahub
