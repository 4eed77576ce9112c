#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "bifurnode/experiments.hpp"
#include "bifurnode/tuning.hpp"

using namespace bifurnode;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string &name) {
  const auto p = fs::temp_directory_path() / ("bifurnode_tuning_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

GridSpec tiny_grid() {
  GridSpec g;
  g.learning_rates = {1e-3};
  g.lambdas = {0.1, 0.01};
  g.layer_counts = {1};
  g.layer_widths = {4};
  g.seeds = {0, 1};
  g.epochs = 2;
  return g;
}

TrainingConfig tiny_base() {
  TrainingConfig c;
  c.batch_size = 2;
  return c;
}

}  // namespace

TEST(Grid, DefaultHasThirtySixCells) {
  const GridSpec g;
  const auto cells = g.cells();
  EXPECT_EQ(cells.size(), 36u);
  EXPECT_EQ(g.run_count(), 108u);
  EXPECT_TRUE(std::is_sorted(cells.begin(), cells.end()));
  EXPECT_EQ(g.epochs, 5000u);
}

TEST(Split, ValidationIsAlphaSixTwo) {
  const auto data = build_dataset(find_experiment("primary"));
  const auto s = split_primary(data);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.train.size(), 8u);
  for (const auto &t : s.validation) EXPECT_EQ(t.alpha, 0.62);
  for (const auto &t : s.train) EXPECT_NE(t.alpha, 0.62);
  EXPECT_THROW(split_primary(s.train), std::invalid_argument);
}

TEST(MaeVal, TrueFieldIsNearZero) {
  const auto s = split_primary(build_dataset(find_experiment("primary")));
  EXPECT_LT(mae_val(TrueField{}, s.validation, SolverConfig::training()), 1e-4);
}

TEST(MaeVal, ZeroFieldMatchesHandComputation) {
  const auto s = split_primary(build_dataset(find_experiment("primary")));
  const auto p = zero_params(uniform_layout(1, 4));
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto &t : s.validation)
    for (const auto &z : t.states) {
      sum += std::abs(z.x - t.states.front().x) + std::abs(z.y - t.states.front().y);
      ++n;
    }
  EXPECT_NEAR(mae_val(NeuralField{p}, s.validation, SolverConfig::training()), sum / static_cast<double>(n), 1e-14);
}

TEST(Summary, PicksLowestMeanAndRanks) {
  const auto g = tiny_grid();
  const auto cells = g.cells();
  std::vector<TuningRun> runs{{cells[0], 0, 0.3}, {cells[0], 1, 0.1}, {cells[1], 0, 0.05}, {cells[1], 1, 0.15}};
  const auto r = summarize_tuning(g, runs);
  EXPECT_EQ(r.best_cell().cell, cells[1]);
  EXPECT_NEAR(r.best_cell().mean, 0.1, 1e-15);
  EXPECT_EQ(r.rank_of(cells[1]), 1u);
  EXPECT_EQ(r.rank_of(cells[0]), 2u);
  runs.pop_back();
  EXPECT_THROW(summarize_tuning(g, runs), std::runtime_error);
}

TEST(Summary, FailedSeedMakesCellInfinite) {
  const auto g = tiny_grid();
  const auto cells = g.cells();
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<TuningRun> runs{{cells[0], 0, inf}, {cells[0], 1, 0.0}, {cells[1], 0, 0.5}, {cells[1], 1, 0.5}};
  const auto r = summarize_tuning(g, runs);
  EXPECT_TRUE(std::isinf(r.cells[0].mean));
  EXPECT_EQ(r.best, 1u);
}

TEST(GridSearch, ResumesFromPartialResults) {
  const auto dir = scratch_dir("resume");
  const auto data = build_dataset(find_experiment("primary"));
  const auto g = tiny_grid();
  GridSearchOptions opt;
  opt.results_csv = dir / "results.csv";
  opt.threads = 2;
  const auto full = grid_search(g, data, tiny_base(), opt);
  ASSERT_EQ(full.runs.size(), 4u);
  const std::string complete = io::read_text(opt.results_csv);

  // Keep the header and two rows, plus a torn line.
  auto lines = io::read_lines(opt.results_csv);
  {
    std::ofstream os(opt.results_csv, std::ios::trunc);
    os << lines[0] << '\n' << lines[1] << '\n' << lines[2] << '\n' << "0.001,0.1,1";
  }
  std::size_t rerun = 0;
  opt.on_run = [&](const TuningRun &) { ++rerun; };
  const auto resumed = grid_search(g, data, tiny_base(), opt);
  EXPECT_EQ(rerun, 2u);
  EXPECT_EQ(io::read_text(opt.results_csv), complete);
  for (std::size_t i = 0; i < full.runs.size(); ++i) EXPECT_EQ(full.runs[i].mae_val, resumed.runs[i].mae_val);

  write_tuning_summary(dir / "summary.csv", g, resumed);
  const auto summary = io::read_lines(dir / "summary.csv");
  EXPECT_EQ(summary[0], "lr,lambda,layers,width,mae_seed0,mae_seed1,mean_mae_val,selected");
  EXPECT_EQ(summary.size(), 3u);
  fs::remove_all(dir);
}

TEST(GridSearch, CellConfigCarriesCell) {
  const GridCell cell{1e-3, 0.001, 2, 32};
  const auto c = cell_config(TrainingConfig{}, cell, 7, 123);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.lambda, 0.001);
  EXPECT_EQ(c.hidden, uniform_layout(2, 32));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.epochs, 123u);
}
