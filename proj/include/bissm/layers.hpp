#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bissm/autodiff.hpp"

namespace bissm {

enum class Activation { kLinear, kTanh, kSigmoid };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

/// One LSTM layer. The three parameters hold all four gates side by side
/// along the columns, in the order input, forget, output, candidate; each
/// block is `hidden_dim` wide.
///
///   w_input:  input_dim  x 4*hidden_dim
///   w_hidden: hidden_dim x 4*hidden_dim
///   bias:     1          x 4*hidden_dim
struct LstmParams {
  ad::ParamId w_input = ad::kNone;
  ad::ParamId w_hidden = ad::kNone;
  ad::ParamId bias = ad::kNone;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

  /// Column range of one gate block inside the fused matrices.
  std::pair<std::size_t, std::size_t> gate_columns(Gate g) const {
    return {g * hidden_dim, (g + 1) * hidden_dim};
  }
};

/// Two independent stacks, one reading the window left-to-right and one
/// right-to-left. Layer k > 0 of a stack consumes the per-step outputs of
/// layer k-1 of the same stack.
struct BiLstmParams {
  std::vector<LstmParams> forward;
  std::vector<LstmParams> backward;

  std::size_t hidden_dim() const { return forward.empty() ? 0 : forward.back().hidden_dim; }
};

struct DenseParams {
  ad::ParamId weight = ad::kNone;  // in x out
  ad::ParamId bias = ad::kNone;    // 1 x out
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kLinear;
};

struct MlpParams {
  std::vector<DenseParams> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, double k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-k, k);
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace detail

/// Weights ~ U(-k, k) with k = 1/sqrt(hidden_dim); forget-gate bias starts at 1.
inline LstmParams make_lstm(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
                            std::size_t hidden_dim, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.w_input = store.add(prefix + ".w_input", detail::uniform_tensor(input_dim, 4 * hidden_dim, k, rng));
  p.w_hidden =
      store.add(prefix + ".w_hidden", detail::uniform_tensor(hidden_dim, 4 * hidden_dim, k, rng));
  Tensor bias = detail::uniform_tensor(1, 4 * hidden_dim, k, rng);
  auto [fb, fe] = p.gate_columns(LstmParams::kForgetGate);
  for (std::size_t c = fb; c < fe; ++c) bias(0, c) = 1.0;
  p.bias = store.add(prefix + ".bias", std::move(bias));
  return p;
}

inline DenseParams make_dense(ad::ParamStore& store, const std::string& prefix, std::size_t in_dim,
                              std::size_t out_dim, Activation act, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(out_dim));
  DenseParams p;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.activation = act;
  p.weight = store.add(prefix + ".weight", detail::uniform_tensor(in_dim, out_dim, k, rng));
  p.bias = store.add(prefix + ".bias", detail::uniform_tensor(1, out_dim, k, rng));
  return p;
}

/// `dims` lists the input width followed by each layer's width.
inline MlpParams make_mlp(ad::ParamStore& store, const std::string& prefix,
                          const std::vector<std::size_t>& dims, Activation act, std::mt19937_64& rng) {
  if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output widths");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    p.layers.push_back(
        make_dense(store, prefix + ".layer" + std::to_string(i), dims[i], dims[i + 1], act, rng));
  }
  return p;
}

inline BiLstmParams make_bilstm(ad::ParamStore& store, const std::string& prefix, std::size_t input_dim,
                                std::size_t hidden_dim, std::size_t layers, std::mt19937_64& rng) {
  BiLstmParams p;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_dim : hidden_dim;
    p.forward.push_back(make_lstm(store, prefix + ".fwd" + std::to_string(l), in, hidden_dim, rng));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_dim : hidden_dim;
    p.backward.push_back(make_lstm(store, prefix + ".bwd" + std::to_string(l), in, hidden_dim, rng));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes. All inputs are batched: one row per sample.

namespace detail {

inline void expect_cols(const char* op, ad::Var v, std::size_t cols, const char* what) {
  if (v.cols() != cols) {
    throw ShapeError(std::string(op) + ": " + what + " has shape " + v.value().shape_string() +
                     ", expected " + std::to_string(cols) + " columns");
  }
}

}  // namespace detail

inline ad::Var apply_activation(ad::Var v, Activation act) {
  switch (act) {
    case Activation::kLinear: return v;
    case Activation::kTanh: return ad::tanh(v);
    case Activation::kSigmoid: return ad::sigmoid(v);
  }
  return v;
}

inline LstmState lstm_cell_step(ad::Tape& tape, ad::Var x, ad::Var h, ad::Var c, const LstmParams& p) {
  detail::expect_cols("lstm_cell_step", x, p.input_dim, "input");
  detail::expect_cols("lstm_cell_step", h, p.hidden_dim, "hidden state");
  detail::expect_cols("lstm_cell_step", c, p.hidden_dim, "cell state");
  if (x.rows() != h.rows() || h.rows() != c.rows()) {
    throw ShapeError("lstm_cell_step: batch sizes differ (" + std::to_string(x.rows()) + ", " +
                     std::to_string(h.rows()) + ", " + std::to_string(c.rows()) + ")");
  }
  const std::size_t hd = p.hidden_dim;
  ad::Var z = ad::matmul(x, tape.param(p.w_input)) + ad::matmul(h, tape.param(p.w_hidden));
  z = z + tape.param(p.bias);
  ad::Var in_gate = ad::sigmoid(ad::slice(z, 0, hd));
  ad::Var forget_gate = ad::sigmoid(ad::slice(z, hd, 2 * hd));
  ad::Var out_gate = ad::sigmoid(ad::slice(z, 2 * hd, 3 * hd));
  ad::Var candidate = ad::tanh(ad::slice(z, 3 * hd, 4 * hd));
  ad::Var c_next = forget_gate * c + in_gate * candidate;
  ad::Var h_next = out_gate * ad::tanh(c_next);
  return {h_next, c_next};
}

/// Runs one layer over the sequence from zero state; returns every step's h.
inline std::vector<ad::Var> lstm_sequence(ad::Tape& tape, std::span<const ad::Var> steps,
                                          const LstmParams& p) {
  if (steps.empty()) throw ShapeError("lstm_sequence: empty window");
  const std::size_t batch = steps.front().rows();
  ad::Var h = tape.constant(Tensor(batch, p.hidden_dim));
  ad::Var c = tape.constant(Tensor(batch, p.hidden_dim));
  std::vector<ad::Var> out;
  out.reserve(steps.size());
  for (const ad::Var& x : steps) {
    auto next = lstm_cell_step(tape, x, h, c, p);
    h = next.h;
    c = next.c;
    out.push_back(h);
  }
  return out;
}

/// Final hidden state after consuming the window left-to-right.
inline ad::Var lstm_encode(ad::Tape& tape, std::span<const ad::Var> steps, const LstmParams& p) {
  if (steps.empty()) throw ShapeError("lstm_encode: empty window");
  return lstm_sequence(tape, steps, p).back();
}

inline ad::Var dense_forward(ad::Tape& tape, ad::Var x, const DenseParams& p) {
  detail::expect_cols("dense_forward", x, p.in_dim, "input");
  ad::Var y = ad::matmul(x, tape.param(p.weight)) + tape.param(p.bias);
  return apply_activation(y, p.activation);
}

inline ad::Var mlp_forward(ad::Tape& tape, ad::Var x, const MlpParams& p) {
  for (const DenseParams& layer : p.layers) x = dense_forward(tape, x, layer);
  return x;
}

/// Decoder: the LSTM starts from (h = state, c = 0) and receives the state as
/// its input at every step; each step's hidden output goes through `head`.
inline std::vector<ad::Var> lstm_decode(ad::Tape& tape, ad::Var state, std::size_t out_len,
                                        const LstmParams& p, const DenseParams& head) {
  if (out_len == 0) throw ShapeError("lstm_decode: out_len must be positive");
  detail::expect_cols("lstm_decode", state, p.hidden_dim, "state");
  if (head.in_dim != p.hidden_dim) {
    throw ShapeError("lstm_decode: head input width " + std::to_string(head.in_dim) +
                     " differs from hidden width " + std::to_string(p.hidden_dim));
  }
  ad::Var h = state;
  ad::Var c = tape.constant(Tensor(state.rows(), p.hidden_dim));
  std::vector<ad::Var> out;
  out.reserve(out_len);
  for (std::size_t t = 0; t < out_len; ++t) {
    auto next = lstm_cell_step(tape, state, h, c, p);
    h = next.h;
    c = next.c;
    out.push_back(dense_forward(tape, h, head));
  }
  return out;
}

/// (u_plus, u_minus): final hidden state of the forward stack reading the
/// window left-to-right and of the backward stack reading it right-to-left.
inline std::pair<ad::Var, ad::Var> bilstm_forward(ad::Tape& tape, std::span<const ad::Var> steps,
                                                  const BiLstmParams& p) {
  if (steps.empty()) throw ShapeError("bilstm_forward: empty window");
  if (p.forward.size() != p.backward.size() || p.forward.empty()) {
    throw ShapeError("bilstm_forward: both directions need the same nonzero layer count");
  }
  std::vector<ad::Var> fwd(steps.begin(), steps.end());
  for (const LstmParams& layer : p.forward) fwd = lstm_sequence(tape, fwd, layer);

  std::vector<ad::Var> bwd(steps.rbegin(), steps.rend());
  for (const LstmParams& layer : p.backward) bwd = lstm_sequence(tape, bwd, layer);
  return {fwd.back(), bwd.back()};
}

/// Splits a batch of flattened time-major windows (rows x steps*dim) into one
/// constant node per time step.
inline std::vector<ad::Var> window_steps(ad::Tape& tape, const Tensor& windows, std::size_t steps,
                                         std::size_t dim) {
  if (windows.cols() != steps * dim) {
    throw ShapeError("window_steps: shape " + windows.shape_string() + " is not " +
                     std::to_string(steps) + " steps of width " + std::to_string(dim));
  }
  std::vector<ad::Var> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor step(windows.rows(), dim);
    for (std::size_t r = 0; r < windows.rows(); ++r) {
      for (std::size_t d = 0; d < dim; ++d) step(r, d) = windows(r, t * dim + d);
    }
    out.push_back(tape.constant(std::move(step)));
  }
  return out;
}

}  // namespace bissm
