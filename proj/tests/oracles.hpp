#pragma once

// Reference implementations for tests. Everything here is written with plain
// scalar loops over std::vector and never touches the tape, so it checks the
// library through an independent code path.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "bissm/autodiff.hpp"
#include "bissm/eval.hpp"
#include "bissm/layers.hpp"
#include "bissm/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major rows

inline Mat to_mat(const bissm::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  }
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  }
  return c;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(double v, bissm::Activation a) {
  switch (a) {
    case bissm::Activation::kLinear: return v;
    case bissm::Activation::kTanh: return std::tanh(v);
    case bissm::Activation::kSigmoid: return sigmoid(v);
  }
  return v;
}

struct Lstm {
  Mat wx, wh;
  Vec b;
  std::size_t in = 0, hidden = 0;

  Lstm(const bissm::ad::ParamStore& s, const bissm::LstmParams& p)
      : wx(to_mat(s.value(p.w_input))), wh(to_mat(s.value(p.w_hidden))), b(to_mat(s.value(p.bias))[0]),
        in(p.input_dim), hidden(p.hidden_dim) {}

  // Gate g's pre-activation for unit j.
  double pre(std::size_t g, std::size_t j, const Vec& x, const Vec& h) const {
    const std::size_t col = g * hidden + j;
    double z = b[col];
    for (std::size_t k = 0; k < in; ++k) z += x[k] * wx[k][col];
    for (std::size_t k = 0; k < hidden; ++k) z += h[k] * wh[k][col];
    return z;
  }

  std::pair<Vec, Vec> step(const Vec& x, const Vec& h, const Vec& c) const {
    Vec hn(hidden), cn(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i = sigmoid(pre(0, j, x, h));
      const double f = sigmoid(pre(1, j, x, h));
      const double o = sigmoid(pre(2, j, x, h));
      const double g = std::tanh(pre(3, j, x, h));
      cn[j] = f * c[j] + i * g;
      hn[j] = o * std::tanh(cn[j]);
    }
    return {hn, cn};
  }

  std::vector<Vec> run(const std::vector<Vec>& xs) const {
    Vec h(hidden, 0.0), c(hidden, 0.0);
    std::vector<Vec> out;
    for (const auto& x : xs) {
      std::tie(h, c) = step(x, h, c);
      out.push_back(h);
    }
    return out;
  }
};

inline Vec dense(const bissm::ad::ParamStore& s, const bissm::DenseParams& p, const Vec& x) {
  const Mat w = to_mat(s.value(p.weight));
  const Vec b = to_mat(s.value(p.bias))[0];
  Vec y(p.out_dim);
  for (std::size_t j = 0; j < p.out_dim; ++j) {
    double z = b[j];
    for (std::size_t k = 0; k < p.in_dim; ++k) z += x[k] * w[k][j];
    y[j] = activate(z, p.activation);
  }
  return y;
}

inline Vec mlp(const bissm::ad::ParamStore& s, const bissm::MlpParams& p, Vec x) {
  for (const auto& layer : p.layers) x = dense(s, layer, x);
  return x;
}

inline std::vector<Vec> stacked(const bissm::ad::ParamStore& s, const std::vector<bissm::LstmParams>& layers,
                                std::vector<Vec> xs) {
  for (const auto& l : layers) xs = Lstm(s, l).run(xs);
  return xs;
}

inline std::vector<Vec> steps_of(std::span<const double> flat, std::size_t dim) {
  std::vector<Vec> out;
  for (std::size_t t = 0; t * dim < flat.size(); ++t) out.emplace_back(flat.begin() + t * dim, flat.begin() + (t + 1) * dim);
  return out;
}

// Model pieces.

inline Vec encode(const bissm::ModelParams& p, std::span<const double> window) {
  return Lstm(p.store, p.encoder).run(steps_of(window, p.config.signal_dim)).back();
}

inline Vec decode(const bissm::ModelParams& p, const Vec& s) {
  Lstm cell(p.store, p.decoder);
  Vec h = s, c(s.size(), 0.0), out;
  for (std::size_t t = 0; t < p.config.xl; ++t) {
    std::tie(h, c) = cell.step(s, h, c);
    for (double v : dense(p.store, p.head, h)) out.push_back(v);
  }
  return out;
}

inline std::pair<Vec, Vec> bilstm(const bissm::ModelParams& p, std::span<const double> u) {
  auto steps = steps_of(u, p.config.control_dim);
  Vec plus = stacked(p.store, p.bilstm.forward, steps).back();
  std::reverse(steps.begin(), steps.end());
  Vec minus = stacked(p.store, p.bilstm.backward, steps).back();
  return {plus, minus};
}

inline std::pair<Vec, Vec> transitions(const bissm::ModelParams& p, const Vec& s, std::span<const double> u) {
  const Vec fs = mlp(p.store, p.transition, s);
  auto [plus, minus] = bilstm(p, u);
  Vec next(fs.size()), prev(fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    next[i] = (fs[i] + plus[i]) / 2.0;
    prev[i] = (fs[i] + minus[i]) / 2.0;
  }
  return {next, prev};
}

inline double sq_dist(const Vec& a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Straight-line evaluation of the six-term training objective.
inline double triplet_loss(const bissm::ModelParams& p, std::span<const double> xp, std::span<const double> xc,
                           std::span<const double> xn, std::span<const double> u) {
  const auto& w = p.config.weights;
  const Vec s = encode(p, xc);
  const Vec sp = encode(p, xp);
  const Vec sn = encode(p, xn);
  auto [next, prev] = transitions(p, s, u);
  const Vec zero(s.size(), 0.0);
  return w.recon_prev * sq_dist(decode(p, prev), xp) + w.recon_curr * sq_dist(decode(p, s), xc) +
         w.recon_next * sq_dist(decode(p, next), xn) + w.state_prev * sq_dist(prev, sp) +
         w.state_curr * sq_dist(s, zero) + w.state_next * sq_dist(next, sn);
}

// Statistics.

/// Two-pass sample covariance with denominator N-1.
inline Mat covariance(const Mat& rows) {
  const std::size_t n = rows.size(), d = rows[0].size();
  Vec mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  Mat cov(d, Vec(d, 0.0));
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
    }
  }
  for (auto& row : cov) {
    for (double& v : row) v /= static_cast<double>(n - 1);
  }
  return cov;
}

/// AUC by comparing every (positive, negative) pair; ties count 1/2.
inline double pairwise_auc(const bissm::ScoreSeries& s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& a : s.records) {
    if (a.label != 1) continue;
    for (const auto& b : s.records) {
      if (b.label != 0) continue;
      pairs += 1.0;
      if (a.score > b.score) wins += 1.0;
      if (a.score == b.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Best F1 by evaluating every distinct score as threshold from scratch.
inline bissm::F1Result exhaustive_best_f1(const bissm::ScoreSeries& s) {
  bissm::F1Result best;
  bool have = false;
  std::vector<double> thresholds;
  for (const auto& r : s.records) thresholds.push_back(r.score);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  for (double t : thresholds) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& r : s.records) {
      const bool flagged = r.score >= t;
      if (flagged && r.label == 1) tp += 1;
      if (flagged && r.label == 0) fp += 1;
      if (!flagged && r.label == 1) fn += 1;
    }
    const double precision = tp / (tp + fp);
    const double recall = tp / (tp + fn);
    const double f1 = tp > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    if (!have || f1 > best.f1 || (f1 == best.f1 && precision > best.precision) ||
        (f1 == best.f1 && precision == best.precision && t < best.threshold)) {
      best = {f1, precision, recall, t};
      have = true;
    }
  }
  return best;
}

// Finite differences.

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
};

/// Central differences (step h) of `loss` against `grads` for every entry of
/// every parameter. An entry passes with relative error <= rel_tol or
/// absolute error <= abs_tol.
inline GradCheck finite_difference_check(bissm::ad::ParamStore& store, const bissm::ad::GradientMap& grads,
                                         const std::function<double()>& loss, double h = 1e-5,
                                         double rel_tol = 1e-4, double abs_tol = 1e-7) {
  GradCheck out;
  for (bissm::ad::ParamId id = 0; id < store.size(); ++id) {
    auto it = grads.find(id);
    for (std::size_t i = 0; i < store.value(id).size(); ++i) {
      double& w = store.value(id)[i];
      const double saved = w;
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = it == grads.end() ? 0.0 : it->second[i];
      const double abs_err = std::abs(numeric - analytic);
      const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic), 1e-300});
      ++out.checked;
      if (abs_err > abs_tol) out.worst_rel = std::max(out.worst_rel, rel);
      if (rel > rel_tol && abs_err > abs_tol) ++out.failures;
    }
  }
  return out;
}

// Linear-Gaussian Kalman filter.

struct KalmanState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline KalmanState kalman_step(const KalmanState& prev, const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                               const Eigen::MatrixXd& q, const Eigen::MatrixXd& h, const Eigen::VectorXd& d,
                               const Eigen::MatrixXd& r, const Eigen::VectorXd& obs) {
  const Eigen::VectorXd m = a * prev.mean + b;
  const Eigen::MatrixXd p = a * prev.cov * a.transpose() + q;
  const Eigen::MatrixXd s = h * p * h.transpose() + r;
  const Eigen::MatrixXd k = p * h.transpose() * s.inverse();
  return {m + k * (obs - (h * m + d)), p - k * s * k.transpose()};
}

}  // namespace oracle
