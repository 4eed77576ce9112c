// Builds the primary dataset, trains a small field for a few epochs and
// compares its bifurcation diagram with the true system on a coarse grid.

#include <iostream>

#include "bifurnode/experiments.hpp"

using namespace bifurnode;

int main() {
  const auto data = build_dataset(find_experiment("primary"));
  std::cout << "series: " << data.size() << ", hopf alpha: " << hopf_alpha() << '\n';

  TrainingConfig cfg;
  cfg.hidden = uniform_layout(2, 16);
  cfg.learning_rate = 1e-3;
  cfg.epochs = 20;
  const auto result = train(data, cfg, [](const LossRecord &r) {
    if (r.epoch % 5 == 0) std::cout << "epoch " << r.epoch << " loss " << r.loss.total << '\n';
  });

  ScanSettings s;
  s.n_alphas = 20;
  s.ics = {kReferenceIc};
  const auto truth = scan(TrueField{}, s, "true");
  const auto learned = scan(NeuralField(result.checkpoint.params), s, "learned");
  const auto b = regime_boundaries(truth.alphas, classify_regimes(truth));
  std::cout << "true onset " << b.oscillation_onset.value_or(-1) << ", collapse from "
            << b.collapse_boundary.value_or(-1) << '\n';
  std::cout << "learned MAE_bif " << mae_bif(learned, truth).total << '\n';
}
