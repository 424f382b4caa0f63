#pragma once

// JSON containers for trained artifacts. Doubles are written in shortest
// round-trip form, so a reload reproduces every value bit for bit.

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <string>

#include "bissm/dataset.hpp"
#include "bissm/filtering.hpp"
#include "bissm/io.hpp"
#include "bissm/model.hpp"
#include "bissm/scoring.hpp"

namespace bissm {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

using nlohmann::json;

inline json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

inline Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw DataError("matrix entry has the wrong length");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

inline json config_to_json(const ModelConfig& c) {
  const LossWeights& w = c.weights;
  return {{"state_dim", c.state_dim},
          {"xl", c.xl},
          {"ul", c.ul},
          {"signal_dim", c.signal_dim},
          {"control_dim", c.control_dim},
          {"bilstm_layers", c.bilstm_layers},
          {"mlp_layers", c.mlp_layers},
          {"weights", {w.recon_prev, w.recon_curr, w.recon_next, w.state_prev, w.state_curr, w.state_next}},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"patience", c.patience},
          {"seed", c.seed}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.state_dim = j.at("state_dim").get<std::size_t>();
  c.xl = j.at("xl").get<std::size_t>();
  c.ul = j.at("ul").get<std::size_t>();
  c.signal_dim = j.at("signal_dim").get<std::size_t>();
  c.control_dim = j.at("control_dim").get<std::size_t>();
  c.bilstm_layers = j.at("bilstm_layers").get<std::size_t>();
  c.mlp_layers = j.at("mlp_layers").get<std::size_t>();
  const auto w = j.at("weights").get<std::vector<double>>();
  if (w.size() != 6) throw DataError("checkpoint: expected 6 loss weights");
  c.weights = {w[0], w[1], w[2], w[3], w[4], w[5]};
  c.adam.learning_rate = j.at("learning_rate").get<double>();
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.epsilon = j.at("adam_epsilon").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <class F>
auto parse_json_file(const std::filesystem::path& path, const char* kind, F&& body) {
  try {
    return body(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed " + kind + ": " + e.what());
  }
}

inline void expect_format(const json& j, const char* format) {
  if (j.at("format").get<std::string>() != format) {
    throw DataError(std::string("expected a '") + format + "' file");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw DataError(std::string("unsupported '") + format + "' version");
  }
}

}  // namespace detail

inline std::string checkpoint_to_string(const ModelParams& p) {
  detail::json params = detail::json::array();
  for (ad::ParamId id = 0; id < p.store.size(); ++id) {
    auto entry = detail::tensor_to_json(p.store.value(id));
    entry["name"] = p.store.name(id);
    params.push_back(std::move(entry));
  }
  detail::json j = {{"format", "bissm-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"config", detail::config_to_json(p.config)},
                    {"params", std::move(params)}};
  return j.dump(1) + "\n";
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  io::write_file(path, checkpoint_to_string(p));
}

/// Rebuilds the parameter layout from the stored config, then overwrites
/// every tensor by name.
inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return detail::parse_json_file(path, "checkpoint", [&](const detail::json& j) {
    detail::expect_format(j, "bissm-checkpoint");
    ModelParams p = ModelParams::initialize(detail::config_from_json(j.at("config")), 0);
    const auto& entries = j.at("params");
    if (entries.size() != p.store.size()) throw DataError(path.string() + ": parameter count mismatch");
    for (const auto& e : entries) {
      const std::string name = e.at("name").get<std::string>();
      const ad::ParamId id = p.store.find(name);
      if (id == ad::kNone) throw DataError(path.string() + ": unknown parameter '" + name + "'");
      Tensor t = detail::tensor_from_json(e);
      if (!t.same_shape(p.store.value(id))) throw DataError(path.string() + ": wrong shape for '" + name + "'");
      p.store.value(id) = std::move(t);
    }
    return p;
  });
}

inline void save_normalization(const NormalizationSpec& spec, const std::filesystem::path& path) {
  auto cols = [](const std::vector<ColumnNormalization>& v) {
    detail::json a = detail::json::array();
    for (const auto& c : v) {
      a.push_back({{"name", c.name},
                   {"kind", c.kind == ColumnKind::kDiscrete ? "discrete" : "continuous"},
                   {"min", c.min},
                   {"max", c.max},
                   {"categories", c.categories}});
    }
    return a;
  };
  detail::json j = {{"format", "bissm-normalization"},
                    {"version", kCheckpointVersion},
                    {"signals", cols(spec.signals)},
                    {"controls", cols(spec.controls)}};
  io::write_file(path, j.dump(1) + "\n");
}

inline NormalizationSpec load_normalization(const std::filesystem::path& path) {
  return detail::parse_json_file(path, "normalization", [&](const detail::json& j) {
    detail::expect_format(j, "bissm-normalization");
    auto cols = [](const detail::json& a) {
      std::vector<ColumnNormalization> v;
      for (const auto& e : a) {
        ColumnNormalization c;
        c.name = e.at("name").get<std::string>();
        c.kind = e.at("kind").get<std::string>() == "discrete" ? ColumnKind::kDiscrete : ColumnKind::kContinuous;
        c.min = e.at("min").get<double>();
        c.max = e.at("max").get<double>();
        c.categories = e.at("categories").get<std::vector<double>>();
        v.push_back(std::move(c));
      }
      return v;
    };
    return NormalizationSpec{cols(j.at("signals")), cols(j.at("controls"))};
  });
}

inline void save_error_model(const ErrorModel& em, const std::filesystem::path& path) {
  detail::json j = {{"format", "bissm-error-model"},
                    {"version", kCheckpointVersion},
                    {"epsilon", em.epsilon()},
                    {"mean", std::vector<double>(em.mean().data(), em.mean().data() + em.mean().size())},
                    {"sigma", detail::matrix_to_json(em.sigma())}};
  io::write_file(path, j.dump(1) + "\n");
}

inline ErrorModel load_error_model(const std::filesystem::path& path) {
  return detail::parse_json_file(path, "error model", [&](const detail::json& j) {
    detail::expect_format(j, "bissm-error-model");
    const auto mean = j.at("mean").get<std::vector<double>>();
    Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    return ErrorModel::from_covariance(detail::matrix_from_json(j.at("sigma")), std::move(m),
                                       j.at("epsilon").get<double>());
  });
}

inline void save_noise(const NoiseEstimates& n, const std::filesystem::path& path) {
  detail::json j = {{"format", "bissm-noise"},
                    {"version", kCheckpointVersion},
                    {"q_forward", detail::matrix_to_json(n.q_forward)},
                    {"q_backward", detail::matrix_to_json(n.q_backward)},
                    {"r", detail::matrix_to_json(n.r)}};
  io::write_file(path, j.dump(1) + "\n");
}

inline NoiseEstimates load_noise(const std::filesystem::path& path) {
  return detail::parse_json_file(path, "noise estimates", [&](const detail::json& j) {
    detail::expect_format(j, "bissm-noise");
    return NoiseEstimates{detail::matrix_from_json(j.at("q_forward")), detail::matrix_from_json(j.at("q_backward")),
                          detail::matrix_from_json(j.at("r"))};
  });
}

}  // namespace bissm
