#pragma once

// Unscented Kalman filtering with learned dynamics. The filter core is
// generic over a StateSpaceDynamics model (batched maps over sigma-point
// rows); NetworkDynamics binds it to the trained encoder/decoder/transition
// networks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bissm/linalg.hpp"
#include "bissm/model.hpp"

namespace bissm {

enum class Direction { kForward, kBackward };

struct GaussianState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Direction direction = Direction::kForward;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Process noise for each transition direction and observation noise.
struct NoiseEstimates {
  Eigen::MatrixXd q_forward;
  Eigen::MatrixXd q_backward;
  Eigen::MatrixXd r;
};

/// Scaled unscented transform parameters.
struct UkfScaling {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;

  double lambda(std::size_t n) const {
    const double nn = static_cast<double>(n);
    return alpha * alpha * (nn + kappa) - nn;
  }
};

struct SigmaPointSet {
  Eigen::MatrixXd points;  // (2n+1) x n, one point per row; row 0 is the mean
  Eigen::VectorXd mean_weights;
  Eigen::VectorXd cov_weights;
  UkfScaling scaling;
};

inline SigmaPointSet sigma_points(const GaussianState& g, const UkfScaling& scaling = {}) {
  const std::size_t n = g.dim();
  if (n == 0 || g.cov.rows() != g.mean.size() || g.cov.cols() != g.mean.size()) {
    throw ShapeError("sigma_points: mean/covariance sizes are inconsistent");
  }
  const double lambda = scaling.lambda(n);
  const double spread = static_cast<double>(n) + lambda;
  if (!(spread > 0.0)) throw ConfigError("sigma_points: n + lambda must be positive");

  Eigen::MatrixXd cov = g.cov;
  linalg::symmetrize(cov);
  const Eigen::MatrixXd root = linalg::psd_sqrt(spread * cov, "sigma_points");

  SigmaPointSet s;
  s.scaling = scaling;
  const auto count = static_cast<Eigen::Index>(2 * n + 1);
  s.points.resize(count, static_cast<Eigen::Index>(n));
  s.points.row(0) = g.mean.transpose();
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    s.points.row(1 + i) = (g.mean + root.col(i)).transpose();
    s.points.row(1 + static_cast<Eigen::Index>(n) + i) = (g.mean - root.col(i)).transpose();
  }
  s.mean_weights = Eigen::VectorXd::Constant(count, 0.5 / spread);
  s.cov_weights = s.mean_weights;
  s.mean_weights(0) = lambda / spread;
  s.cov_weights(0) = lambda / spread + (1.0 - scaling.alpha * scaling.alpha + scaling.beta);
  return s;
}

/// Weighted mean and covariance of propagated sigma points (rows of `ys`).
inline void unscented_moments(const SigmaPointSet& s, const Eigen::MatrixXd& ys, Eigen::VectorXd& mean,
                              Eigen::MatrixXd& cov) {
  // Offsets from the central point: with small alpha the central weight is
  // about -1/alpha^2, and summing raw points would amplify rounding by that
  // much. Identical points then give their own value back exactly.
  const Eigen::RowVectorXd y0 = ys.row(0);
  const Eigen::MatrixXd offsets = ys.bottomRows(ys.rows() - 1).rowwise() - y0;
  mean = y0.transpose() + offsets.transpose() * s.mean_weights.tail(ys.rows() - 1);
  const Eigen::MatrixXd centered = ys.rowwise() - mean.transpose();
  cov = centered.transpose() * s.cov_weights.asDiagonal() * centered;
}

/// Batched dynamics: every map takes one state per row and returns one
/// result per row.
template <class D>
concept StateSpaceDynamics = requires(const D& d, const Eigen::MatrixXd& states, std::size_t k) {
  // predicted state at k+1 from state at k
  { d.forward(states, k) } -> std::convertible_to<Eigen::MatrixXd>;
  // predicted state at k-1 from state at k
  { d.backward(states, k) } -> std::convertible_to<Eigen::MatrixXd>;
  // observation (flattened window) of each state
  { d.measure(states) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Propagates `prior` through `transition` and adds `q`.
template <class Fn>
GaussianState unscented_predict(const GaussianState& prior, Fn&& transition, const Eigen::MatrixXd& q,
                                Direction direction, const UkfScaling& scaling = {}) {
  const SigmaPointSet s = sigma_points(prior, scaling);
  const Eigen::MatrixXd ys = transition(s.points);
  if (ys.rows() != s.points.rows() || ys.cols() != s.points.cols()) {
    throw ShapeError("unscented_predict: transition changed the state dimension");
  }
  GaussianState out;
  out.direction = direction;
  unscented_moments(s, ys, out.mean, out.cov);
  out.cov += q;
  linalg::symmetrize(out.cov);
  if (!out.mean.allFinite() || !out.cov.allFinite()) throw NumericError("unscented_predict: non-finite state");
  return out;
}

/// Measurement update of `predicted` against `obs` through `measure` with
/// observation noise `r`.
template <class Fn>
GaussianState unscented_update(const GaussianState& predicted, Fn&& measure, const Eigen::VectorXd& obs,
                               const Eigen::MatrixXd& r, const UkfScaling& scaling = {}) {
  const SigmaPointSet s = sigma_points(predicted, scaling);
  const Eigen::MatrixXd ys = measure(s.points);
  if (ys.rows() != s.points.rows() || ys.cols() != obs.size() || r.rows() != obs.size()) {
    throw ShapeError("unscented_update: observation dimensions disagree");
  }
  Eigen::VectorXd y_mean;
  Eigen::MatrixXd p_yy;
  unscented_moments(s, ys, y_mean, p_yy);
  p_yy += r;
  linalg::symmetrize(p_yy);
  const Eigen::MatrixXd dx = s.points.rowwise() - predicted.mean.transpose();
  const Eigen::MatrixXd dy = ys.rowwise() - y_mean.transpose();
  const Eigen::MatrixXd p_xy = dx.transpose() * s.cov_weights.asDiagonal() * dy;

  const auto llt = linalg::robust_llt(p_yy, "unscented_update");
  const Eigen::MatrixXd gain = llt.solve(p_xy.transpose()).transpose();

  GaussianState out;
  out.direction = predicted.direction;
  out.mean = predicted.mean + gain * (obs - y_mean);
  out.cov = predicted.cov - gain * p_yy * gain.transpose();
  linalg::symmetrize(out.cov);
  if (!out.mean.allFinite() || !out.cov.allFinite()) throw NumericError("unscented_update: non-finite state");
  return out;
}

// ---------------------------------------------------------------------------
// Learned dynamics

/// Encoded states and control summaries of every window of a dataset.
struct LatentTrajectory {
  Eigen::MatrixXd states;   // E(x_k)
  Eigen::MatrixXd u_plus;   // forward BiLSTM summary of u_k
  Eigen::MatrixXd u_minus;  // backward BiLSTM summary of u_k
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c);
  }
  return m;
}

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  }
  return t;
}

}  // namespace detail

inline LatentTrajectory encode_dataset(const WindowedDataset& ds, const ModelParams& p, std::size_t chunk = 512) {
  const auto n = static_cast<Eigen::Index>(ds.size());
  const auto sd = static_cast<Eigen::Index>(p.config.state_dim);
  LatentTrajectory out{Eigen::MatrixXd(n, sd), Eigen::MatrixXd(n, sd), Eigen::MatrixXd(n, sd)};
  for (std::size_t b = 0; b < ds.size(); b += chunk) {
    const std::size_t e = std::min(ds.size(), b + chunk);
    std::vector<std::size_t> idx(e - b);
    for (std::size_t i = b; i < e; ++i) idx[i - b] = i;
    ad::Tape tape(&p.store);
    const auto rows = static_cast<Eigen::Index>(e - b);
    out.states.middleRows(static_cast<Eigen::Index>(b), rows) =
        detail::to_eigen(encode(tape, p, ds.gather_signal(idx)).value());
    auto [up, um] = control_summary(tape, p, ds.gather_control(idx));
    out.u_plus.middleRows(static_cast<Eigen::Index>(b), rows) = detail::to_eigen(up.value());
    out.u_minus.middleRows(static_cast<Eigen::Index>(b), rows) = detail::to_eigen(um.value());
  }
  return out;
}

/// F, B and D of a trained model over one dataset, with the control
/// summaries precomputed per window.
class NetworkDynamics {
 public:
  NetworkDynamics(const ModelParams& params, const LatentTrajectory& latent) : p_(&params), latent_(&latent) {}

  Eigen::MatrixXd forward(const Eigen::MatrixXd& states, std::size_t k) const {
    return transition(states, latent_->u_plus.row(static_cast<Eigen::Index>(k)));
  }
  Eigen::MatrixXd backward(const Eigen::MatrixXd& states, std::size_t k) const {
    return transition(states, latent_->u_minus.row(static_cast<Eigen::Index>(k)));
  }
  Eigen::MatrixXd measure(const Eigen::MatrixXd& states) const {
    ad::Tape tape(&p_->store);
    return detail::to_eigen(decode(tape, *p_, tape.constant(detail::to_tensor(states))).value());
  }

 private:
  Eigen::MatrixXd transition(const Eigen::MatrixXd& states, const Eigen::RowVectorXd& summary) const {
    ad::Tape tape(&p_->store);
    ad::Var fs = mlp_forward(tape, tape.constant(detail::to_tensor(states)), p_->transition);
    Eigen::MatrixXd out = detail::to_eigen(fs.value());
    out.rowwise() += summary;
    return 0.5 * out;
  }

  const ModelParams* p_;
  const LatentTrajectory* latent_;
};

static_assert(StateSpaceDynamics<NetworkDynamics>);

/// Q_f from E(x_t) - F(E(x_{t-1}), u_{t-1}), Q_b from E(x_t) - B(E(x_{t+1}),
/// u_{t+1}) and R from x_t - D(E(x_t)), all over the validation windows.
inline NoiseEstimates estimate_noise(const WindowedDataset& val, const ModelParams& p) {
  const LatentTrajectory latent = encode_dataset(val, p);
  const NetworkDynamics dyn(p, latent);
  std::vector<std::size_t> pairs;  // k with (k-1, k) consecutive
  for (std::size_t k = 1; k < val.size(); ++k) {
    if (val.consecutive(k - 1, k)) pairs.push_back(k);
  }
  if (pairs.size() < 2) throw DataError("estimate_noise: need at least 2 consecutive window pairs");

  const auto sd = static_cast<Eigen::Index>(p.config.state_dim);
  Eigen::MatrixXd fwd_res(static_cast<Eigen::Index>(pairs.size()), sd);
  Eigen::MatrixXd bwd_res(static_cast<Eigen::Index>(pairs.size()), sd);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t k = pairs[i];
    const auto row = static_cast<Eigen::Index>(i);
    const auto prev = static_cast<Eigen::Index>(k - 1);
    const auto curr = static_cast<Eigen::Index>(k);
    fwd_res.row(row) = latent.states.row(curr) - dyn.forward(latent.states.row(prev), k - 1).row(0);
    bwd_res.row(row) = latent.states.row(prev) - dyn.backward(latent.states.row(curr), k).row(0);
  }
  const Eigen::MatrixXd recon = dyn.measure(latent.states);
  const Eigen::MatrixXd obs = detail::to_eigen(val.gather_signal([&] {
    std::vector<std::size_t> all(val.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }()));

  NoiseEstimates out;
  Eigen::VectorXd mean;
  linalg::mean_covariance(fwd_res, mean, out.q_forward);
  linalg::mean_covariance(bwd_res, mean, out.q_backward);
  linalg::mean_covariance(obs - recon, mean, out.r);
  linalg::symmetrize(out.q_forward);
  linalg::symmetrize(out.q_backward);
  linalg::symmetrize(out.r);
  return out;
}

/// Forward step at k: predict from the posterior at k-1 through F with
/// u_{k-1}'s summary, then update against the observed window at k.
template <StateSpaceDynamics D>
GaussianState filter_forward_step(const D& dyn, const GaussianState& prev, std::size_t prev_index,
                                  const Eigen::VectorXd& obs, const NoiseEstimates& noise,
                                  const UkfScaling& scaling = {}) {
  if (prev.direction != Direction::kForward) throw Error("forward step needs a forward-tagged state");
  auto pred = unscented_predict(
      prev, [&](const Eigen::MatrixXd& pts) { return dyn.forward(pts, prev_index); }, noise.q_forward,
      Direction::kForward, scaling);
  return unscented_update(pred, [&](const Eigen::MatrixXd& pts) { return dyn.measure(pts); }, obs, noise.r,
                          scaling);
}

/// Backward step at k: predict from the forward posterior at k+1 through B
/// with u_{k+1}'s summary, then update against the observed window at k.
template <StateSpaceDynamics D>
GaussianState filter_backward_step(const D& dyn, const GaussianState& fwd_next, std::size_t next_index,
                                   const Eigen::VectorXd& obs, const NoiseEstimates& noise,
                                   const UkfScaling& scaling = {}) {
  if (fwd_next.direction != Direction::kForward) throw Error("backward step needs the forward posterior at t+1");
  auto pred = unscented_predict(
      fwd_next, [&](const Eigen::MatrixXd& pts) { return dyn.backward(pts, next_index); }, noise.q_backward,
      Direction::kBackward, scaling);
  return unscented_update(pred, [&](const Eigen::MatrixXd& pts) { return dyn.measure(pts); }, obs, noise.r,
                          scaling);
}

/// Forward UKF step with the trained networks. `u_window` is the control
/// window of the previous time step.
inline GaussianState ukf_forward_step(const GaussianState& prev, std::span<const double> u_window,
                                      std::span<const double> x_obs, const ModelParams& p,
                                      const NoiseEstimates& noise, const UkfScaling& scaling = {}) {
  LatentTrajectory latent;
  {
    ad::Tape tape(&p.store);
    auto [up, um] = control_summary(tape, p, Tensor::row(u_window));
    latent.u_plus = detail::to_eigen(up.value());
    latent.u_minus = detail::to_eigen(um.value());
  }
  const NetworkDynamics dyn(p, latent);
  const Eigen::VectorXd obs = Eigen::Map<const Eigen::VectorXd>(x_obs.data(), static_cast<Eigen::Index>(x_obs.size()));
  return filter_forward_step(dyn, prev, 0, obs, noise, scaling);
}

/// Backward UKF step with the trained networks. `u_window` is the control
/// window at t+1; `x_obs` is the observed window at t.
inline GaussianState ukf_backward_step(const GaussianState& fwd_next, std::span<const double> u_window,
                                       std::span<const double> x_obs, const ModelParams& p,
                                       const NoiseEstimates& noise, const UkfScaling& scaling = {}) {
  LatentTrajectory latent;
  {
    ad::Tape tape(&p.store);
    auto [up, um] = control_summary(tape, p, Tensor::row(u_window));
    latent.u_plus = detail::to_eigen(up.value());
    latent.u_minus = detail::to_eigen(um.value());
  }
  const NetworkDynamics dyn(p, latent);
  const Eigen::VectorXd obs = Eigen::Map<const Eigen::VectorXd>(x_obs.data(), static_cast<Eigen::Index>(x_obs.size()));
  return filter_backward_step(dyn, fwd_next, 0, obs, noise, scaling);
}

// ---------------------------------------------------------------------------
// Bidirectional reconstruction

struct ErrorStats {
  double median = std::numeric_limits<double>::quiet_NaN();
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;
};

inline ErrorStats squared_error_stats(std::vector<double> sq) {
  ErrorStats s;
  s.count = sq.size();
  if (sq.empty()) return s;
  double sum = 0.0;
  for (double v : sq) sum += v;
  s.mean = sum / static_cast<double>(sq.size());
  std::sort(sq.begin(), sq.end());
  const std::size_t m = sq.size() / 2;
  s.median = sq.size() % 2 == 1 ? sq[m] : 0.5 * (sq[m - 1] + sq[m]);
  return s;
}

struct SmoothingResult {
  std::vector<GaussianState> forward;   // one per window
  std::vector<GaussianState> backward;  // one per window except the last
  Eigen::MatrixXd forward_recon;        // windows x signal_dim: last step of D(mean)
  Eigen::MatrixXd backward_recon;       // last row is NaN (no successor)
  ErrorStats forward_error;             // over windows that have both reconstructions
  ErrorStats backward_error;
};

/// Runs the forward filter over all windows, then one backward step per
/// window from the stored forward posterior of its successor.
///
/// `observations` holds one flattened window per row. `initial` is the
/// forward posterior of window 0. `ground_truth` (optional, windows x
/// signal_dim) is compared with the last step of each reconstruction.
template <StateSpaceDynamics D>
SmoothingResult run_bidirectional_filter(const D& dyn, const Eigen::MatrixXd& observations,
                                         const GaussianState& initial, const NoiseEstimates& noise,
                                         std::size_t signal_dim, const Eigen::MatrixXd* ground_truth = nullptr,
                                         const UkfScaling& scaling = {}) {
  const auto n = static_cast<std::size_t>(observations.rows());
  if (n < 2) throw DataError("smoothing needs at least 2 windows");
  if (ground_truth != nullptr &&
      (ground_truth->rows() != observations.rows() || ground_truth->cols() != static_cast<Eigen::Index>(signal_dim))) {
    throw ShapeError("smoothing: ground truth must have one row of signal_dim values per window");
  }
  SmoothingResult out;
  out.forward.reserve(n);
  out.forward.push_back(initial);
  out.forward.back().direction = Direction::kForward;
  for (std::size_t k = 1; k < n; ++k) {
    out.forward.push_back(filter_forward_step(dyn, out.forward[k - 1], k - 1,
                                              observations.row(static_cast<Eigen::Index>(k)).transpose(), noise,
                                              scaling));
  }
  out.backward.reserve(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    out.backward.push_back(filter_backward_step(dyn, out.forward[k + 1], k + 1,
                                                observations.row(static_cast<Eigen::Index>(k)).transpose(), noise,
                                                scaling));
  }

  auto last_step = [&](const std::vector<GaussianState>& states, std::size_t rows) {
    Eigen::MatrixXd means(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(states[0].dim()));
    for (std::size_t k = 0; k < states.size(); ++k) means.row(static_cast<Eigen::Index>(k)) = states[k].mean.transpose();
    const Eigen::MatrixXd decoded = dyn.measure(means);
    const auto sd = static_cast<Eigen::Index>(signal_dim);
    Eigen::MatrixXd rec = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(rows), sd,
                                                    std::numeric_limits<double>::quiet_NaN());
    rec.topRows(decoded.rows()) = decoded.rightCols(sd);
    return rec;
  };
  out.forward_recon = last_step(out.forward, n);
  out.backward_recon = last_step(out.backward, n);

  if (ground_truth != nullptr) {
    std::vector<double> fe, be;
    for (Eigen::Index k = 0; k + 1 < static_cast<Eigen::Index>(n); ++k) {
      fe.push_back((out.forward_recon.row(k) - ground_truth->row(k)).squaredNorm() / static_cast<double>(signal_dim));
      be.push_back((out.backward_recon.row(k) - ground_truth->row(k)).squaredNorm() / static_cast<double>(signal_dim));
    }
    out.forward_error = squared_error_stats(std::move(fe));
    out.backward_error = squared_error_stats(std::move(be));
  }
  return out;
}

/// Bidirectional filtering of a test set with the trained networks. The
/// forward filter starts at E(first window) with covariance Q_f. Windows must
/// be consecutive.
inline SmoothingResult smooth_series(const WindowedDataset& test, const ModelParams& p, const NoiseEstimates& noise,
                                     const Eigen::MatrixXd* ground_truth = nullptr, const UkfScaling& scaling = {}) {
  if (test.size() < 2) throw DataError("smooth_series: need at least 2 windows");
  for (std::size_t k = 1; k < test.size(); ++k) {
    if (!test.consecutive(k - 1, k)) throw DataError("smooth_series: windows are not consecutive");
  }
  const LatentTrajectory latent = encode_dataset(test, p);
  const NetworkDynamics dyn(p, latent);
  std::vector<std::size_t> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Eigen::MatrixXd obs = detail::to_eigen(test.gather_signal(all));
  GaussianState init{latent.states.row(0).transpose(), noise.q_forward, Direction::kForward};
  return run_bidirectional_filter(dyn, obs, init, noise, test.signal_dim, ground_truth, scaling);
}

}  // namespace bissm
