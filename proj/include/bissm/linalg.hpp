#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "bissm/error.hpp"

namespace bissm::linalg {

/// Sample mean and covariance (denominator N-1) of the rows of `samples`.
inline void mean_covariance(const Eigen::MatrixXd& samples, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  const Eigen::Index n = samples.rows();
  if (n < 2) throw DataError("covariance needs at least 2 samples, got " + std::to_string(n));
  mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
}

inline void symmetrize(Eigen::MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline constexpr double kJitterStart = 1e-9;
inline constexpr double kJitterMax = 1e-3;

/// Cholesky factor of a symmetric matrix. If the plain factorization fails,
/// retries with jitter * I for jitter = 1e-9, 1e-8, ..., 1e-3.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const auto eye = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  for (double jitter = kJitterStart; jitter <= kJitterMax * 1.0000001; jitter *= 10.0) {
    llt.compute(m + jitter * eye);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericError(std::string(what) + ": matrix is not positive definite even with jitter 1e-3");
}

/// A matrix S with S S^T = m for symmetric positive semidefinite m. Uses a
/// pivoted LDL^T so exactly singular inputs (e.g. zero) need no jitter;
/// indefinite inputs get the same jitter escalation as robust_llt.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::Index n = m.rows();
  const double scale = std::max(1.0, m.diagonal().cwiseAbs().maxCoeff());
  auto attempt = [&](const Eigen::MatrixXd& a, Eigen::MatrixXd& out) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) return false;
    Eigen::VectorXd d = ldlt.vectorD();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d(i) < -1e-12 * scale) return false;
      d(i) = d(i) > 0.0 ? std::sqrt(d(i)) : 0.0;
    }
    Eigen::MatrixXd l = ldlt.matrixL();
    out = ldlt.transpositionsP().transpose() * (l * d.asDiagonal());
    return true;
  };
  Eigen::MatrixXd out;
  if (attempt(m, out)) return out;
  const auto eye = Eigen::MatrixXd::Identity(n, n);
  for (double jitter = kJitterStart; jitter <= kJitterMax * 1.0000001; jitter *= 10.0) {
    if (attempt(m + jitter * eye, out)) return out;
  }
  throw NumericError(std::string(what) + ": covariance is not positive semidefinite even with jitter 1e-3");
}

}  // namespace bissm::linalg
