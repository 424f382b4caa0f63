#pragma once

// bissm command line: simulate | train | score | eval | filter.
//
// Each command reads its inputs, writes everything under --out, and echoes the
// effective configuration to <out>/run_config.toml so the run can be repeated
// with `--config <out>/run_config.toml`.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bissm/bissm.hpp"

namespace bissm::cli {

namespace fs = std::filesystem;

// Artifact names inside a model directory.
inline constexpr const char* kSchemaFile = "schema.txt";
inline constexpr const char* kNormalizationFile = "normalization.json";
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kErrorModelFile = "error_model.json";
inline constexpr const char* kNoiseFile = "noise.json";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kRunConfigFile = "run_config.toml";

struct SimulateOptions {
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t length = 10000;
  std::size_t test_length = 10000;
  double sigma_w = 0.5;
  double sigma_v = 1.0;
  double anomaly_sigma_w = 1.0;
  double anomaly_sigma_v = 2.0;
  std::size_t anomaly_period = 1000;
  std::size_t anomaly_tail = 100;
  bool anomalies = true;
};

struct TrainOptions {
  fs::path train_csv;
  fs::path schema;
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t xl = 0;  // 0: take from the schema
  std::size_t ul = 0;
  std::size_t state_dim = 4;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::size_t patience = 5;
  double learning_rate = 1e-3;
  double val_fraction = 0.75;
  std::vector<double> weights = {1.0, 1.0, 1.0, 0.1, 0.1, 0.1};
};

struct ScoreOptions {
  fs::path test_csv;
  fs::path model_dir;
  fs::path out;
  fs::path schema;  // empty: the copy stored with the model
};

struct EvalOptions {
  fs::path scores;
  fs::path out;
};

struct FilterOptions {
  fs::path test_csv;
  fs::path ground_truth;
  fs::path model_dir;
  fs::path out;
  fs::path schema;
};

struct TrainSummary {
  TrainingLog log;
  double val_loss = 0.0;
  std::size_t train_windows = 0;
  std::size_t val_windows = 0;
};

namespace detail {

inline void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::is_regular_file(p)) throw ConfigError("missing " + p.string() + (hint.empty() ? "" : "; " + hint));
}

inline fs::path model_file(const fs::path& dir, const char* name) {
  const fs::path p = dir / name;
  require_file(p, "run `bissm train --out " + dir.string() + "` first");
  return p;
}

inline Schema model_schema(const fs::path& model_dir, const fs::path& override_path) {
  if (!override_path.empty()) {
    require_file(override_path, "");
    return Schema::load(override_path);
  }
  return Schema::load(model_file(model_dir, kSchemaFile));
}

inline TimeSeriesFrame load_frame(const fs::path& csv, const Schema& schema) {
  require_file(csv, "");
  return downsample(load_csv(csv, schema), schema.downsample);
}

/// Test-set windows with the geometry stored in the checkpoint.
inline WindowedDataset load_windows(const fs::path& csv, const Schema& schema, const NormalizationSpec& norm,
                                    const ModelConfig& cfg) {
  const TimeSeriesFrame frame = apply_normalization(load_frame(csv, schema), norm);
  WindowedDataset ds = make_windows(frame, cfg.xl, cfg.ul);
  if (ds.signal_dim != cfg.signal_dim || ds.control_dim != cfg.control_dim) {
    throw DataError(csv.string() + ": normalized columns do not match the checkpoint (" +
                    std::to_string(ds.signal_dim) + " signal / " + std::to_string(ds.control_dim) +
                    " control columns, model expects " + std::to_string(cfg.signal_dim) + " / " +
                    std::to_string(cfg.control_dim) + ")");
  }
  return ds;
}

inline std::string synthetic_schema() {
  return "time = time_index\n"
         "signals = x\n"
         "controls = u\n"
         "label = label\n"
         "xl = 8\n"
         "ul = 16\n";
}

}  // namespace detail

/// train.csv (normal), test.csv (labeled anomaly ranges), ground_truth.csv
/// (noiseless test series) and the matching schema.
inline void cmd_simulate(const SimulateOptions& o) {
  fs::create_directories(o.out);
  const SyntheticSeries train = synth_generate(o.length, o.sigma_w, o.sigma_v, {}, o.seed);
  AnomalySpec spec;
  if (o.anomalies) {
    spec = AnomalySpec::periodic(o.test_length, o.anomaly_period, o.anomaly_tail, o.anomaly_sigma_w,
                                 o.anomaly_sigma_v);
  }
  const SyntheticSeries test = synth_generate(o.test_length, o.sigma_w, o.sigma_v, spec, o.seed ^ 0xd1b54a32d192ed03ULL);
  write_csv(train.frame, o.out / "train.csv");
  write_csv(test.frame, o.out / "test.csv");

  std::string gt = "time_index,x\n";
  for (std::size_t i = 0; i < test.ground_truth.size(); ++i) {
    gt += io::format_double(test.frame.time[i]) + "," + io::format_double(test.ground_truth[i]) + "\n";
  }
  io::write_file(o.out / "ground_truth.csv", gt);
  io::write_file(o.out / "synthetic.schema", detail::synthetic_schema());
}

inline TrainSummary cmd_train(const TrainOptions& o) {
  detail::require_file(o.schema, "");
  Schema schema = Schema::load(o.schema);
  // Training never reads labels, and normal-only files may lack the column.
  if (!schema.label_column.empty()) {
    schema.drop.push_back(schema.label_column);
    schema.label_column.clear();
  }
  if (o.weights.size() != 6) throw ConfigError("--weights takes 6 values (a1,a2,a3,b1,b2,b3)");

  const TimeSeriesFrame raw = detail::load_frame(o.train_csv, schema);
  const NormalizationSpec norm = fit_normalization(raw);
  const std::size_t xl = o.xl > 0 ? o.xl : schema.xl;
  const std::size_t ul = o.ul > 0 ? o.ul : schema.ul;
  const WindowedDataset windows = make_windows(apply_normalization(raw, norm), xl, ul);
  auto [train_set, val_set] = split_train_val(windows, o.val_fraction);

  ModelConfig cfg;
  cfg.state_dim = o.state_dim;
  cfg.xl = xl;
  cfg.ul = ul;
  cfg.signal_dim = windows.signal_dim;
  cfg.control_dim = windows.control_dim;
  cfg.weights = {o.weights[0], o.weights[1], o.weights[2], o.weights[3], o.weights[4], o.weights[5]};
  cfg.adam.learning_rate = o.learning_rate;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.patience = o.patience;
  cfg.seed = o.seed;
  cfg.validate();

  TrainResult result = train(train_set, &val_set, cfg);
  const ErrorModel em = fit_error_model(val_set, result.params);
  const NoiseEstimates noise = estimate_noise(val_set, result.params);

  fs::create_directories(o.out);
  save_checkpoint(result.params, o.out / kCheckpointFile);
  save_normalization(norm, o.out / kNormalizationFile);
  save_error_model(em, o.out / kErrorModelFile);
  save_noise(noise, o.out / kNoiseFile);
  io::write_file(o.out / kSchemaFile, io::read_file(o.schema));

  std::string log = "epoch,train_loss,val_loss\n";
  for (const auto& e : result.log.epochs) {
    log += std::to_string(e.epoch) + "," + io::format_double(e.train_loss) + "," + io::format_double(e.val_loss) + "\n";
  }
  io::write_file(o.out / kTrainLogFile, log);

  TrainSummary s;
  s.log = result.log;
  s.val_loss = evaluate_loss(result.params, val_set);
  s.train_windows = train_set.size();
  s.val_windows = val_set.size();
  return s;
}

inline ScoreSeries cmd_score(const ScoreOptions& o) {
  const Schema schema = detail::model_schema(o.model_dir, o.schema);
  const ModelParams params = load_checkpoint(detail::model_file(o.model_dir, kCheckpointFile));
  const NormalizationSpec norm = load_normalization(detail::model_file(o.model_dir, kNormalizationFile));
  const ErrorModel em = load_error_model(detail::model_file(o.model_dir, kErrorModelFile));
  const WindowedDataset test = detail::load_windows(o.test_csv, schema, norm, params.config);
  ScoreSeries scores = score_series(test, params, em);
  fs::create_directories(o.out);
  write_score_csv(scores, o.out / "scores.csv");
  return scores;
}

inline EvalReport cmd_eval(const EvalOptions& o) {
  detail::require_file(o.scores, "run `bissm score` first");
  const EvalReport r = evaluate(read_score_csv(o.scores));
  fs::create_directories(o.out);
  write_report(r, o.out / "report.txt", o.out / "roc.csv");
  return r;
}

/// Forward/backward UKF reconstruction of the test series. The CSV is in
/// original units; the error statistics in filter_report.txt are computed on
/// min-max normalized values.
inline SmoothingResult cmd_filter(const FilterOptions& o) {
  const Schema schema = detail::model_schema(o.model_dir, o.schema);
  const ModelParams params = load_checkpoint(detail::model_file(o.model_dir, kCheckpointFile));
  const NormalizationSpec norm = load_normalization(detail::model_file(o.model_dir, kNormalizationFile));
  const NoiseEstimates noise = load_noise(detail::model_file(o.model_dir, kNoiseFile));
  const WindowedDataset test = detail::load_windows(o.test_csv, schema, norm, params.config);

  Schema gt_schema;
  gt_schema.time_column = schema.time_column;
  gt_schema.downsample = schema.downsample;
  for (const auto& c : norm.signals) gt_schema.signals.push_back({c.name, ColumnKind::kContinuous});
  const TimeSeriesFrame gt_frame = detail::load_frame(o.ground_truth, gt_schema);
  const std::size_t sd = params.config.signal_dim;
  Eigen::MatrixXd gt(static_cast<Eigen::Index>(test.size()), static_cast<Eigen::Index>(sd));
  for (std::size_t k = 0; k < test.size(); ++k) {
    const std::size_t row = test.end_rows[k];
    if (row >= gt_frame.length() || gt_frame.time[row] != test.end_times[k]) {
      throw DataError(o.ground_truth.string() + ": rows do not line up with the test series at time " +
                      io::format_double(test.end_times[k]));
    }
    for (std::size_t j = 0; j < sd; ++j) {
      gt(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = norm.signals[j].normalize(gt_frame.signals[j].values[row]);
    }
  }

  SmoothingResult res = smooth_series(test, params, noise, &gt);

  auto name = [&](const char* what, std::size_t j) {
    return sd == 1 ? std::string(what) : std::string(what) + "_" + norm.signals[j].name;
  };
  std::string csv = "time_index";
  for (const char* col : {"ground_truth", "observation", "forward_recon", "backward_recon"}) {
    for (std::size_t j = 0; j < sd; ++j) csv += "," + name(col, j);
  }
  csv += "\n";
  const std::size_t last = (params.config.xl - 1) * sd;  // offset of the final step in a window
  for (std::size_t k = 0; k < test.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    csv += io::format_double(test.end_times[k]);
    auto emit = [&](auto value_of) {
      for (std::size_t j = 0; j < sd; ++j) {
        const double v = value_of(j);
        csv += "," + (std::isfinite(v) ? io::format_double(norm.signals[j].denormalize(v)) : std::string("nan"));
      }
    };
    emit([&](std::size_t j) { return gt(kk, static_cast<Eigen::Index>(j)); });
    emit([&](std::size_t j) { return test.signal_window(k)[last + j]; });
    emit([&](std::size_t j) { return res.forward_recon(kk, static_cast<Eigen::Index>(j)); });
    emit([&](std::size_t j) { return res.backward_recon(kk, static_cast<Eigen::Index>(j)); });
    csv += "\n";
  }
  fs::create_directories(o.out);
  io::write_file(o.out / "smoothing.csv", csv);

  std::string report = "# squared errors on min-max normalized values, windows 0..N-2\n";
  report += "forward_median_sq_error = " + io::format_double(res.forward_error.median) + "\n";
  report += "forward_mean_sq_error = " + io::format_double(res.forward_error.mean) + "\n";
  report += "backward_median_sq_error = " + io::format_double(res.backward_error.median) + "\n";
  report += "backward_mean_sq_error = " + io::format_double(res.backward_error.mean) + "\n";
  report += "count = " + std::to_string(res.forward_error.count) + "\n";
  io::write_file(o.out / "filter_report.txt", report);
  return res;
}

// ---------------------------------------------------------------------------
// Argument parsing

/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bidirectional state-space anomaly detection"};
  app.set_config("--config", "", "TOML/INI file; command-line flags override its keys");
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Generate the synthetic train/test series");
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "RNG seed")->required();
  simulate->add_option("--length", sim.length, "Training series length")->capture_default_str();
  simulate->add_option("--test-length", sim.test_length, "Test series length")->capture_default_str();
  simulate->add_option("--sigma-w", sim.sigma_w, "Process noise std")->capture_default_str();
  simulate->add_option("--sigma-v", sim.sigma_v, "Observation noise std")->capture_default_str();
  simulate->add_option("--anomaly-sigma-w", sim.anomaly_sigma_w, "Process noise std in anomalies")->capture_default_str();
  simulate->add_option("--anomaly-sigma-v", sim.anomaly_sigma_v, "Observation noise std in anomalies")->capture_default_str();
  simulate->add_option("--anomaly-period", sim.anomaly_period)->capture_default_str();
  simulate->add_option("--anomaly-tail", sim.anomaly_tail, "Anomalous rows at the end of each period")->capture_default_str();
  bool no_anomalies = false;
  simulate->add_flag("--no-anomalies", no_anomalies, "Generate the test series without anomalies");

  TrainOptions tr;
  std::string weights;
  auto* train_cmd = app.add_subcommand("train", "Fit the model, error covariance and filter noise");
  train_cmd->add_option("--train", tr.train_csv, "Training CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--schema", tr.schema, "Schema file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Model directory")->required();
  train_cmd->add_option("--seed", tr.seed, "RNG seed")->required();
  train_cmd->add_option("--xl", tr.xl, "Signal window length (default: schema)");
  train_cmd->add_option("--ul", tr.ul, "Control window length (default: schema)");
  train_cmd->add_option("--state-dim", tr.state_dim)->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--patience", tr.patience)->capture_default_str();
  train_cmd->add_option("--lr", tr.learning_rate)->capture_default_str();
  train_cmd->add_option("--val-fraction", tr.val_fraction, "Share of windows used for training")->capture_default_str();
  train_cmd->add_option("--weights", tr.weights, "Loss weights a1,a2,a3,b1,b2,b3")->delimiter(',')->expected(6)->capture_default_str();

  ScoreOptions sc;
  auto* score_cmd = app.add_subcommand("score", "Anomaly scores for a test CSV");
  score_cmd->add_option("--test", sc.test_csv, "Test CSV")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--model", sc.model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
  score_cmd->add_option("--schema", sc.schema, "Schema (default: the model's)")->check(CLI::ExistingFile);
  score_cmd->add_option("--out", sc.out, "Output directory")->required();

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "AUC and best F1 of a score CSV");
  eval_cmd->add_option("--scores", ev.scores, "Score CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();

  FilterOptions fo;
  auto* filter_cmd = app.add_subcommand("filter", "Forward/backward UKF reconstruction");
  filter_cmd->add_option("--test", fo.test_csv, "Observed CSV")->required()->check(CLI::ExistingFile);
  filter_cmd->add_option("--ground-truth", fo.ground_truth, "Noiseless CSV")->required()->check(CLI::ExistingFile);
  filter_cmd->add_option("--model", fo.model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
  filter_cmd->add_option("--schema", fo.schema, "Schema (default: the model's)")->check(CLI::ExistingFile);
  filter_cmd->add_option("--out", fo.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  sim.anomalies = !no_anomalies;

  // Effective settings of the active subcommand, loadable with --config.
  auto echo = [&](const fs::path& dir) {
    const CLI::App* sub = app.get_subcommands().front();
    std::string text = "[" + sub->get_name() + "]\n";
    std::istringstream lines(sub->config_to_str(true, false));
    for (std::string line; std::getline(lines, line);) {
      if (!line.ends_with("=\"\"")) text += line + "\n";  // unset optional paths
    }
    fs::create_directories(dir);
    io::write_file(dir / kRunConfigFile, text);
  };

  try {
    if (*simulate) {
      cmd_simulate(sim);
      echo(sim.out);
      out << "wrote " << (sim.out / "train.csv").string() << ", test.csv, ground_truth.csv\n";
    } else if (*train_cmd) {
      const TrainSummary s = cmd_train(tr);
      echo(tr.out);
      out << "trained " << s.log.epochs.size() << " epochs (best " << s.log.best_epoch
          << "), validation loss " << s.val_loss << "\n";
    } else if (*score_cmd) {
      const ScoreSeries s = cmd_score(sc);
      echo(sc.out);
      out << "scored " << s.size() << " windows\n";
    } else if (*eval_cmd) {
      const EvalReport r = cmd_eval(ev);
      echo(ev.out);
      out << "auc " << r.auc << "  best_f1 " << r.best_f1 << "  precision " << r.precision << "  recall "
          << r.recall << "\n";
    } else if (*filter_cmd) {
      const SmoothingResult r = cmd_filter(fo);
      echo(fo.out);
      out << "median squared error: forward " << r.forward_error.median << ", backward "
          << r.backward_error.median << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace bissm::cli
