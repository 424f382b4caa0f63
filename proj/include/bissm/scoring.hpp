#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bissm/linalg.hpp"
#include "bissm/model.hpp"
#include "bissm/score_series.hpp"

namespace bissm {

/// Covariance of one-step-ahead reconstruction residuals and the factor used
/// to whiten new residuals against it.
class ErrorModel {
 public:
  ErrorModel() = default;

  /// Regularized by epsilon * I before factorization. epsilon = 0 requires a
  /// positive definite sigma.
  static ErrorModel from_covariance(Eigen::MatrixXd sigma, Eigen::VectorXd mean, double epsilon) {
    if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
      throw ShapeError("ErrorModel: covariance must be square and nonempty");
    }
    if (mean.size() != sigma.rows()) throw ShapeError("ErrorModel: mean and covariance sizes differ");
    ErrorModel em;
    em.sigma_ = std::move(sigma);
    em.mean_ = std::move(mean);
    em.epsilon_ = epsilon;
    const Eigen::MatrixXd reg =
        em.sigma_ + epsilon * Eigen::MatrixXd::Identity(em.sigma_.rows(), em.sigma_.cols());
    em.factor_.compute(reg);
    if (em.factor_.info() != Eigen::Success) {
      throw NumericError("ErrorModel: regularized covariance is not positive definite");
    }
    em.sigma_inv_ = em.factor_.solve(Eigen::MatrixXd::Identity(reg.rows(), reg.cols()));
    linalg::symmetrize(em.sigma_inv_);
    return em;
  }

  /// Default regularization: 1e-6 * trace(sigma) / n, floored at 1e-12 so a
  /// zero covariance still yields an invertible matrix.
  static double default_epsilon(const Eigen::MatrixXd& sigma) {
    const double eps = 1e-6 * sigma.trace() / static_cast<double>(sigma.rows());
    return std::max(eps, 1e-12);
  }

  std::size_t dim() const { return static_cast<std::size_t>(sigma_.rows()); }
  const Eigen::MatrixXd& sigma() const { return sigma_; }
  const Eigen::MatrixXd& sigma_inv() const { return sigma_inv_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  double epsilon() const { return epsilon_; }

  /// sqrt(r^T (sigma + eps I)^-1 r), evaluated through the Cholesky factor.
  double distance(std::span<const double> residual) const {
    if (residual.size() != dim()) {
      throw ShapeError("mahalanobis: residual of length " + std::to_string(residual.size()) +
                       " against a " + std::to_string(dim()) + "-dimensional error model");
    }
    Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(residual.data(), static_cast<Eigen::Index>(residual.size()));
    factor_.matrixL().solveInPlace(r);
    return std::sqrt(r.squaredNorm());
  }

 private:
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd sigma_inv_;
  Eigen::VectorXd mean_;
  double epsilon_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> factor_;
};

inline double mahalanobis(std::span<const double> x, std::span<const double> mu, const ErrorModel& em) {
  if (x.size() != mu.size()) {
    throw ShapeError("mahalanobis: x has length " + std::to_string(x.size()) + ", mu has " +
                     std::to_string(mu.size()));
  }
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - mu[i];
  return em.distance(r);
}

/// e_t = x_t - D(F(E(x_{t-1}), u_{t-1})) for every window with a consecutive
/// predecessor. `index[k]` is the window that residual row k belongs to.
struct Residuals {
  std::vector<std::size_t> index;
  Eigen::MatrixXd values;
};

inline Residuals one_step_residuals(const WindowedDataset& ds, const ModelParams& p, std::size_t chunk = 512) {
  Residuals out;
  for (std::size_t i = 1; i < ds.size(); ++i) {
    if (ds.consecutive(i - 1, i)) out.index.push_back(i);
  }
  const auto width = static_cast<Eigen::Index>(ds.signal_width());
  out.values.resize(static_cast<Eigen::Index>(out.index.size()), width);
  for (std::size_t b = 0; b < out.index.size(); b += chunk) {
    const std::size_t e = std::min(out.index.size(), b + chunk);
    std::vector<std::size_t> prev, curr;
    for (std::size_t k = b; k < e; ++k) {
      prev.push_back(out.index[k] - 1);
      curr.push_back(out.index[k]);
    }
    const Tensor mu = predict_next_batch(p, ds.gather_signal(prev), ds.gather_control(prev));
    const Tensor x = ds.gather_signal(curr);
    for (std::size_t k = b; k < e; ++k) {
      for (Eigen::Index c = 0; c < width; ++c) {
        const double r = x(k - b, static_cast<std::size_t>(c)) - mu(k - b, static_cast<std::size_t>(c));
        if (!std::isfinite(r)) {
          throw NumericError("non-finite residual for the window ending at time " +
                             io::format_double(ds.end_times[out.index[k]]));
        }
        out.values(static_cast<Eigen::Index>(k), c) = r;
      }
    }
  }
  return out;
}

/// Empirical covariance (N-1 denominator) of residual rows with the default
/// regularization.
inline ErrorModel fit_error_model(const Eigen::MatrixXd& residuals) {
  if (residuals.rows() < 2) {
    throw DataError("fit_error_model: need at least 2 residuals, got " + std::to_string(residuals.rows()));
  }
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  linalg::mean_covariance(residuals, mean, cov);
  linalg::symmetrize(cov);
  const double eps = ErrorModel::default_epsilon(cov);
  return ErrorModel::from_covariance(std::move(cov), std::move(mean), eps);
}

/// Error model from the one-step residuals of the validation windows.
inline ErrorModel fit_error_model(const WindowedDataset& val, const ModelParams& p) {
  return fit_error_model(one_step_residuals(val, p).values);
}

/// One Mahalanobis score per window that has a predecessor, in window order.
inline ScoreSeries score_series(const WindowedDataset& test, const ModelParams& p, const ErrorModel& em) {
  const Residuals res = one_step_residuals(test, p);
  ScoreSeries out;
  out.records.reserve(res.index.size());
  for (std::size_t k = 0; k < res.index.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    Eigen::VectorXd r = res.values.row(row).transpose();
    const std::size_t w = res.index[k];
    out.records.push_back({test.end_times[w], em.distance(std::span<const double>(r.data(), r.size())),
                           test.labels[w]});
  }
  return out;
}

}  // namespace bissm
