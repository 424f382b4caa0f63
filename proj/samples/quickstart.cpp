// Library walk-through on a short synthetic series: generate, normalize,
// window, train, score, evaluate. Runs in a few seconds.

#include <cstdio>

#include "bissm/bissm.hpp"

int main() {
  using namespace bissm;

  auto train_raw = synth_generate(2000, 0.5, 1.0, {}, 7).frame;
  auto test_raw = synth_generate(2000, 0.5, 1.0, AnomalySpec::periodic(2000, 500, 50, 1.0, 2.0), 8).frame;

  const NormalizationSpec norm = fit_normalization(train_raw);
  const WindowedDataset windows = make_windows(apply_normalization(train_raw, norm), 8, 16);
  const WindowedDataset test = make_windows(apply_normalization(test_raw, norm), 8, 16);
  auto [fit_set, val_set] = split_train_val(windows);

  ModelConfig cfg;
  cfg.signal_dim = windows.signal_dim;
  cfg.control_dim = windows.control_dim;
  cfg.epochs = 5;
  cfg.seed = 1;
  TrainResult trained = train(fit_set, &val_set, cfg);
  for (const auto& e : trained.log.epochs) {
    std::printf("epoch %zu  train %.4f  val %.4f\n", e.epoch, e.train_loss, e.val_loss);
  }

  const ErrorModel em = fit_error_model(val_set, trained.params);
  const EvalReport report = evaluate(score_series(test, trained.params, em));
  std::printf("auc %.3f  best_f1 %.3f  (precision %.3f, recall %.3f)\n", report.auc, report.best_f1,
              report.precision, report.recall);
  return 0;
}
