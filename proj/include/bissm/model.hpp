#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bissm/autodiff.hpp"
#include "bissm/dataset.hpp"
#include "bissm/layers.hpp"
#include "bissm/optim.hpp"

namespace bissm {

/// Weights of the six terms of the training objective. Terms 1-3 are window
/// reconstruction errors at t-1, t, t+1; term 4 and 6 are state prediction
/// errors; term 5 shrinks the current state toward the origin.
struct LossWeights {
  double recon_prev = 1.0;
  double recon_curr = 1.0;
  double recon_next = 1.0;
  double state_prev = 0.1;
  double state_curr = 0.1;
  double state_next = 0.1;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct ModelConfig {
  std::size_t state_dim = 4;
  std::size_t xl = 8;
  std::size_t ul = 16;
  std::size_t signal_dim = 1;
  std::size_t control_dim = 2;  // width of one control-window step: signals + controls
  std::size_t bilstm_layers = 2;
  std::size_t mlp_layers = 2;
  LossWeights weights;
  AdamConfig adam;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::size_t patience = 5;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(state_dim, "state_dim");
    positive(xl, "xl");
    positive(ul, "ul");
    positive(signal_dim, "signal_dim");
    positive(control_dim, "control_dim");
    positive(bilstm_layers, "bilstm_layers");
    positive(mlp_layers, "mlp_layers");
    positive(batch_size, "batch_size");
    const LossWeights& w = weights;
    for (double v : {w.recon_prev, w.recon_curr, w.recon_next, w.state_prev, w.state_curr, w.state_next}) {
      if (!(v > 0.0)) throw ConfigError("model config: all loss weights must be > 0");
    }
    if (!(adam.learning_rate > 0.0)) throw ConfigError("model config: learning rate must be > 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Learnable parameters of the encoder E, decoder D (LSTM + linear head), the
/// state map f and the control BiLSTM, all registered in one store.
struct ModelParams {
  ModelConfig config;
  ad::ParamStore store;
  LstmParams encoder;
  LstmParams decoder;
  DenseParams head;
  MlpParams transition;
  BiLstmParams bilstm;

  static ModelParams initialize(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.config = cfg;
    const std::size_t s = cfg.state_dim;
    p.encoder = make_lstm(p.store, "encoder", cfg.signal_dim, s, rng);
    p.decoder = make_lstm(p.store, "decoder", s, s, rng);
    p.head = make_dense(p.store, "decoder.head", s, cfg.signal_dim, Activation::kLinear, rng);
    std::vector<std::size_t> dims(cfg.mlp_layers + 1, s);
    p.transition = make_mlp(p.store, "transition", dims, Activation::kTanh, rng);
    p.bilstm = make_bilstm(p.store, "bilstm", cfg.control_dim, s, cfg.bilstm_layers, rng);
    return p;
  }

  /// Sets every parameter to zero.
  void zero() {
    for (ad::ParamId id = 0; id < store.size(); ++id) {
      for (double& v : store.value(id).data()) v = 0.0;
    }
  }

  std::size_t window_width() const { return config.xl * config.signal_dim; }
  std::size_t control_width() const { return config.ul * config.control_dim; }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config == b.config && a.store == b.store;
  }
};

// ---------------------------------------------------------------------------
// Batched building blocks (one row per sample)

namespace detail {

inline void expect_width(const char* op, const Tensor& t, std::size_t width, const char* what) {
  if (t.cols() != width) {
    throw ShapeError(std::string(op) + ": " + what + " has shape " + t.shape_string() + ", expected " +
                     std::to_string(width) + " columns");
  }
}

}  // namespace detail

/// s = E(x): final encoder hidden state over each flattened signal window.
inline ad::Var encode(ad::Tape& tape, const ModelParams& p, const Tensor& windows) {
  detail::expect_width("encode", windows, p.window_width(), "signal windows");
  auto steps = window_steps(tape, windows, p.config.xl, p.config.signal_dim);
  return lstm_encode(tape, steps, p.encoder);
}

/// x = D(s), flattened time-major to xl * signal_dim columns.
inline ad::Var decode(ad::Tape& tape, const ModelParams& p, ad::Var state) {
  auto steps = lstm_decode(tape, state, p.config.xl, p.decoder, p.head);
  return ad::concat(steps);
}

/// (u+, u-) summaries of each control window.
inline std::pair<ad::Var, ad::Var> control_summary(ad::Tape& tape, const ModelParams& p,
                                                   const Tensor& control_windows) {
  detail::expect_width("control_summary", control_windows, p.control_width(), "control windows");
  auto steps = window_steps(tape, control_windows, p.config.ul, p.config.control_dim);
  return bilstm_forward(tape, steps, p.bilstm);
}

struct Transitions {
  ad::Var next;  // F(s, u) = (f(s) + u+) / 2
  ad::Var prev;  // B(s, u) = (f(s) + u-) / 2
};

inline Transitions transitions(ad::Tape& tape, const ModelParams& p, ad::Var state,
                               const Tensor& control_windows) {
  if (state.cols() != p.config.state_dim) {
    throw ShapeError("transitions: state has shape " + state.value().shape_string() + ", expected " +
                     std::to_string(p.config.state_dim) + " columns");
  }
  auto [u_plus, u_minus] = control_summary(tape, p, control_windows);
  ad::Var fs = mlp_forward(tape, state, p.transition);
  return {ad::scale(fs + u_plus, 0.5), ad::scale(fs + u_minus, 0.5)};
}

// ---------------------------------------------------------------------------
// Single-sample conveniences

namespace detail {

inline std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace detail

inline std::vector<double> encode_window(const ModelParams& p, std::span<const double> window) {
  ad::Tape tape(&p.store);
  return detail::to_vector(encode(tape, p, Tensor::row(window)).value());
}

inline std::vector<double> decode_state(const ModelParams& p, std::span<const double> state) {
  ad::Tape tape(&p.store);
  return detail::to_vector(decode(tape, p, tape.constant(Tensor::row(state))).value());
}

/// F(s, u): predicted next state.
inline std::vector<double> transition_forward(const ModelParams& p, std::span<const double> state,
                                              std::span<const double> control_window) {
  ad::Tape tape(&p.store);
  auto tr = transitions(tape, p, tape.constant(Tensor::row(state)), Tensor::row(control_window));
  return detail::to_vector(tr.next.value());
}

/// B(s, u): predicted previous state.
inline std::vector<double> transition_backward(const ModelParams& p, std::span<const double> state,
                                               std::span<const double> control_window) {
  ad::Tape tape(&p.store);
  auto tr = transitions(tape, p, tape.constant(Tensor::row(state)), Tensor::row(control_window));
  return detail::to_vector(tr.prev.value());
}

/// mu = D(F(E(x_prev), u_prev)) for a batch of predecessor windows.
inline Tensor predict_next_batch(const ModelParams& p, const Tensor& x_prev, const Tensor& u_prev) {
  ad::Tape tape(&p.store);
  ad::Var s = encode(tape, p, x_prev);
  auto tr = transitions(tape, p, s, u_prev);
  return decode(tape, p, tr.next).value();
}

inline std::vector<double> predict_next(const ModelParams& p, std::span<const double> x_prev,
                                        std::span<const double> u_prev) {
  return detail::to_vector(predict_next_batch(p, Tensor::row(x_prev), Tensor::row(u_prev)));
}

// ---------------------------------------------------------------------------
// Objective

/// Unweighted term sums plus the weighted total, summed over the batch.
struct LossBreakdown {
  double total = 0.0;
  double recon_prev = 0.0;
  double recon_curr = 0.0;
  double recon_next = 0.0;
  double state_prev = 0.0;
  double state_curr = 0.0;
  double state_next = 0.0;
};

struct BatchLoss {
  ad::Var loss;  // weighted sum over the batch rows
  LossBreakdown parts;
};

/// State targets E(x_prev), E(x_next) computed off the tape.
struct StateTargets {
  Tensor prev;
  Tensor next;
};

inline StateTargets state_targets(const ModelParams& p, const Tensor& x_prev, const Tensor& x_next) {
  ad::Tape targets(&p.store);
  return {encode(targets, p, x_prev).value(), encode(targets, p, x_next).value()};
}

/// Training objective over a batch of consecutive window triplets. The state
/// targets E(x_prev) and E(x_next) enter as constants; gradients reach the
/// encoder only through s_t = E(x_curr). Pass `frozen` to hold the targets
/// fixed at previously computed values.
inline BatchLoss triplet_loss(ad::Tape& tape, const ModelParams& p, const Tensor& x_prev,
                              const Tensor& x_curr, const Tensor& x_next, const Tensor& u_curr,
                              const StateTargets* frozen = nullptr) {
  const std::size_t batch = x_curr.rows();
  if (x_prev.rows() != batch || x_next.rows() != batch || u_curr.rows() != batch) {
    throw ShapeError("triplet_loss: batch sizes of the four inputs differ");
  }
  detail::expect_width("triplet_loss", x_prev, p.window_width(), "x_prev");
  detail::expect_width("triplet_loss", x_next, p.window_width(), "x_next");
  const LossWeights& w = p.config.weights;

  StateTargets t = frozen != nullptr ? *frozen : state_targets(p, x_prev, x_next);
  Tensor target_prev = std::move(t.prev);
  Tensor target_next = std::move(t.next);

  ad::Var s = encode(tape, p, x_curr);
  auto tr = transitions(tape, p, s, u_curr);
  ad::Var rp = ad::sum_squares(decode(tape, p, tr.prev) - tape.constant(x_prev));
  ad::Var rc = ad::sum_squares(decode(tape, p, s) - tape.constant(x_curr));
  ad::Var rn = ad::sum_squares(decode(tape, p, tr.next) - tape.constant(x_next));
  ad::Var sp = ad::sum_squares(tape.constant(std::move(target_prev)) - tr.prev);
  ad::Var sc = ad::sum_squares(s);
  ad::Var sn = ad::sum_squares(tape.constant(std::move(target_next)) - tr.next);

  ad::Var total = ad::scale(rp, w.recon_prev) + ad::scale(rc, w.recon_curr) + ad::scale(rn, w.recon_next) +
                  ad::scale(sp, w.state_prev) + ad::scale(sc, w.state_curr) + ad::scale(sn, w.state_next);
  BatchLoss out{total, {}};
  out.parts.total = total.value().item();
  out.parts.recon_prev = rp.value().item();
  out.parts.recon_curr = rc.value().item();
  out.parts.recon_next = rn.value().item();
  out.parts.state_prev = sp.value().item();
  out.parts.state_curr = sc.value().item();
  out.parts.state_next = sn.value().item();
  return out;
}

/// Loss of a single triplet.
inline LossBreakdown loss_triplet(std::span<const double> x_prev, std::span<const double> x_curr,
                                  std::span<const double> x_next, std::span<const double> u_curr,
                                  const ModelParams& p) {
  ad::Tape tape(&p.store);
  return triplet_loss(tape, p, Tensor::row(x_prev), Tensor::row(x_curr), Tensor::row(x_next),
                      Tensor::row(u_curr))
      .parts;
}

/// Centers t of every (t-1, t, t+1) triple of consecutive windows.
inline std::vector<std::size_t> triplet_centers(const WindowedDataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < ds.size(); ++i) {
    if (ds.consecutive(i - 1, i) && ds.consecutive(i, i + 1)) out.push_back(i);
  }
  return out;
}

namespace detail {

struct TripletBatch {
  Tensor x_prev, x_curr, x_next, u_curr;
};

inline TripletBatch gather_triplets(const WindowedDataset& ds, std::span<const std::size_t> centers) {
  std::vector<std::size_t> prev(centers.size()), next(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    prev[i] = centers[i] - 1;
    next[i] = centers[i] + 1;
  }
  return {ds.gather_signal(prev), ds.gather_signal(centers), ds.gather_signal(next), ds.gather_control(centers)};
}

inline std::size_t worker_threads() {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BISSM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

// Gradient evaluation splits a batch into fixed-size shards so the reduction
// order, and therefore the result, does not depend on the thread count.
inline constexpr std::size_t kShardSize = 16;

}  // namespace detail

struct GradientResult {
  double loss_sum = 0.0;   // sum of per-triplet losses
  ad::GradientMap grads;   // gradient of the mean loss over the batch
};

inline GradientResult batch_gradients(const ModelParams& p, const WindowedDataset& ds,
                                      std::span<const std::size_t> centers) {
  if (centers.empty()) throw DataError("batch_gradients: empty batch");
  const std::size_t shards = (centers.size() + detail::kShardSize - 1) / detail::kShardSize;
  std::vector<GradientResult> partial(shards);
  auto run_shard = [&](std::size_t k) {
    const std::size_t b = k * detail::kShardSize;
    const std::size_t e = std::min(centers.size(), b + detail::kShardSize);
    auto batch = detail::gather_triplets(ds, centers.subspan(b, e - b));
    ad::Tape tape(&p.store);
    auto loss = triplet_loss(tape, p, batch.x_prev, batch.x_curr, batch.x_next, batch.u_curr);
    partial[k].loss_sum = loss.parts.total;
    partial[k].grads = tape.backward(loss.loss);
  };

  const std::size_t threads = std::min(detail::worker_threads(), shards);
  if (threads <= 1) {
    for (std::size_t k = 0; k < shards; ++k) run_shard(k);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < shards; k += threads) run_shard(k);
      });
    }
  }

  GradientResult out;
  const double inv = 1.0 / static_cast<double>(centers.size());
  for (const auto& part : partial) {
    out.loss_sum += part.loss_sum;
    for (const auto& [id, g] : part.grads) {
      auto [it, inserted] = out.grads.try_emplace(id, g);
      if (!inserted) {
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
      }
    }
  }
  for (auto& [id, g] : out.grads) {
    for (double& v : g.data()) v *= inv;
  }
  if (!std::isfinite(out.loss_sum)) throw NumericError("batch_gradients: loss is not finite");
  return out;
}

/// Mean triplet loss over every consecutive triplet in `ds`, without gradients.
inline double evaluate_loss(const ModelParams& p, const WindowedDataset& ds, std::size_t chunk = 256) {
  const auto centers = triplet_centers(ds);
  if (centers.empty()) throw DataError("evaluate_loss: fewer than 3 consecutive windows");
  double sum = 0.0;
  for (std::size_t b = 0; b < centers.size(); b += chunk) {
    const std::size_t e = std::min(centers.size(), b + chunk);
    auto batch = detail::gather_triplets(ds, std::span<const std::size_t>(centers).subspan(b, e - b));
    ad::Tape tape(&p.store);
    sum += triplet_loss(tape, p, batch.x_prev, batch.x_curr, batch.x_next, batch.u_curr).parts.total;
  }
  return sum / static_cast<double>(centers.size());
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct TrainResult {
  ModelParams params;
  TrainingLog log;
};

/// Minibatch Adam over shuffled triplets. With validation windows, training
/// stops after `patience` epochs without improvement and the best epoch's
/// parameters are returned; otherwise the final parameters are.
inline TrainResult train(const WindowedDataset& train_set, const WindowedDataset* val_set,
                         const ModelConfig& cfg) {
  cfg.validate();
  if (train_set.size() < 3) throw DataError("train: need at least 3 windows, got " + std::to_string(train_set.size()));
  if (train_set.signal_dim != cfg.signal_dim || train_set.control_dim != cfg.control_dim ||
      train_set.xl != cfg.xl || train_set.ul != cfg.ul) {
    throw ShapeError("train: window geometry does not match the model config");
  }
  auto centers = triplet_centers(train_set);
  if (centers.empty()) throw DataError("train: no consecutive window triplets");
  const bool has_val = val_set != nullptr && !triplet_centers(*val_set).empty();

  TrainResult result{ModelParams::initialize(cfg, cfg.seed), {}};
  ModelParams& params = result.params;
  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  AdamState adam = AdamState::zeros_like(params.store);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(centers.begin(), centers.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < centers.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(centers.size(), b + cfg.batch_size);
      auto g = batch_gradients(params, train_set, std::span<const std::size_t>(centers).subspan(b, e - b));
      loss_sum += g.loss_sum;
      adam_step(params.store, g.grads, adam, cfg.adam);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(centers.size());
    if (has_val) rec.val_loss = evaluate_loss(params, *val_set);
    result.log.epochs.push_back(rec);

    if (!has_val) {
      result.log.best_epoch = epoch;
      continue;
    }
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best = params;
      result.log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      result.log.stopped_early = true;
      break;
    }
  }
  if (has_val) params = std::move(best);
  return result;
}

}  // namespace bissm
