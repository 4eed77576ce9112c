#pragma once

// Hyperparameter grid search with a held-out extrapolation alpha.
//
// The two alpha = 0.62 series of the primary dataset form the validation set;
// every cell of the grid is trained once per seed on the remaining series and
// scored by the validation MAE of a full-length rollout (no physics term).
// Results are appended to a CSV as runs finish, so an interrupted search picks
// up where it stopped.

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "bifurnode/dynsys.hpp"
#include "bifurnode/io.hpp"
#include "bifurnode/odesolve.hpp"
#include "bifurnode/parallel.hpp"
#include "bifurnode/training.hpp"

namespace bifurnode {

inline constexpr double kValidationAlpha = 0.62;
inline constexpr std::string_view kTuningHeader = "lr,lambda,layers,width,seed,mae_val";

struct GridCell {
  double learning_rate = 0.0;
  double lambda = 0.0;
  std::size_t layers = 0;
  std::size_t width = 0;

  auto key() const { return std::tie(learning_rate, lambda, layers, width); }
  bool operator==(const GridCell &o) const { return key() == o.key(); }
  bool operator<(const GridCell &o) const { return key() < o.key(); }
};

struct GridSpec {
  std::vector<double> learning_rates = {1e-4, 1e-3};
  std::vector<double> lambdas = {0.1, 0.01, 0.001};
  std::vector<std::size_t> layer_counts = {1, 2, 3};
  std::vector<std::size_t> layer_widths = {32, 64};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t epochs = 5000;

  // Sorted by (lr, lambda, layers, width).
  std::vector<GridCell> cells() const {
    std::vector<GridCell> out;
    for (double lr : learning_rates)
      for (double lam : lambdas)
        for (std::size_t l : layer_counts)
          for (std::size_t w : layer_widths) out.push_back({lr, lam, l, w});
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t run_count() const { return cells().size() * seeds.size(); }
};

struct SplitDataset {
  std::vector<Trajectory> train;
  std::vector<Trajectory> validation;
};

inline SplitDataset split_primary(std::span<const Trajectory> dataset, double validation_alpha = kValidationAlpha) {
  SplitDataset s;
  for (const auto &t : dataset) (t.alpha == validation_alpha ? s.validation : s.train).push_back(t);
  if (s.validation.empty())
    throw std::invalid_argument("split_primary: no series with alpha = " + io::fmt_double(validation_alpha));
  return s;
}

// Mean 1-norm error of full rollouts from each series' first observation.
// +inf when any rollout fails.
template <class Field>
double mae_val(const Field &field, std::span<const Trajectory> validation, const SolverConfig &solver) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto &t : validation) {
    try {
      const auto pred = integrate_dopri5(field, t.states.front(), t.alpha, t.times, solver).states;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        sum += std::abs(pred[i].x - t.states[i].x) + std::abs(pred[i].y - t.states[i].y);
        ++n;
      }
    } catch (const std::exception &) {
      return std::numeric_limits<double>::infinity();
    }
  }
  if (n == 0) throw std::invalid_argument("mae_val: empty validation set");
  const double v = sum / static_cast<double>(n);
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

struct TuningRun {
  GridCell cell;
  std::uint64_t seed = 0;
  double mae_val = 0.0;
};

struct CellSummary {
  GridCell cell;
  std::vector<double> per_seed;  // in GridSpec::seeds order
  double mean = 0.0;             // +inf if any seed failed
};

struct TuningResult {
  std::vector<TuningRun> runs;  // cell order, then seed order
  std::vector<CellSummary> cells;
  std::size_t best = 0;

  const CellSummary &best_cell() const { return cells.at(best); }

  // 1-based position of `cell` when cells are ranked by mean (ties by key).
  std::size_t rank_of(const GridCell &cell) const {
    const CellSummary *target = nullptr;
    for (const auto &c : cells)
      if (c.cell == cell) target = &c;
    if (!target) throw std::invalid_argument("rank_of: cell not in table");
    std::size_t rank = 1;
    for (const auto &c : cells)
      if (c.mean < target->mean || (c.mean == target->mean && c.cell < target->cell)) ++rank;
    return rank;
  }
};

inline TrainingConfig cell_config(const TrainingConfig &base, const GridCell &cell, std::uint64_t seed,
                                  std::size_t epochs) {
  TrainingConfig c = base;
  c.learning_rate = cell.learning_rate;
  c.lambda = cell.lambda;
  c.hidden = uniform_layout(cell.layers, cell.width);
  c.seed = seed;
  c.epochs = epochs;
  return c;
}

// Trains one (cell, seed) and scores it; failures become +inf.
inline double tuning_run(const SplitDataset &split, const TrainingConfig &config) {
  try {
    const auto result = train(split.train, config);
    return mae_val(NeuralField(result.checkpoint.params), split.validation, config.solver);
  } catch (const TrainingError &) {
    return std::numeric_limits<double>::infinity();
  }
}

inline std::string tuning_row(const TuningRun &r) {
  return io::fmt_double(r.cell.learning_rate) + "," + io::fmt_double(r.cell.lambda) + "," +
         std::to_string(r.cell.layers) + "," + std::to_string(r.cell.width) + "," + std::to_string(r.seed) + "," +
         io::fmt_double(r.mae_val);
}

inline std::vector<TuningRun> read_tuning_results(const std::filesystem::path &p) {
  std::vector<TuningRun> out;
  if (!std::filesystem::exists(p)) return out;
  const auto lines = io::read_lines(p);
  io::expect_header(lines, kTuningHeader, p);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto f = io::split(lines[n]);
    // A torn final line from an interrupted write is ignored.
    if (f.size() != 6) continue;
    try {
      TuningRun r;
      r.cell = {io::parse_double(f[0]), io::parse_double(f[1]), static_cast<std::size_t>(io::parse_int(f[2])),
                static_cast<std::size_t>(io::parse_int(f[3]))};
      r.seed = static_cast<std::uint64_t>(io::parse_int(f[4]));
      r.mae_val = io::parse_double(f[5]);
      out.push_back(r);
    } catch (const io::FormatError &) {
      if (n + 1 != lines.size()) throw;
    }
  }
  return out;
}

inline TuningResult summarize_tuning(const GridSpec &grid, std::span<const TuningRun> runs) {
  std::map<std::pair<GridCell, std::uint64_t>, double> by_key;
  for (const auto &r : runs) by_key[{r.cell, r.seed}] = r.mae_val;
  TuningResult result;
  for (const auto &cell : grid.cells()) {
    CellSummary s;
    s.cell = cell;
    for (auto seed : grid.seeds) {
      const auto it = by_key.find({cell, seed});
      if (it == by_key.end()) throw std::runtime_error("summarize_tuning: missing run " + tuning_row({cell, seed, 0.0}));
      s.per_seed.push_back(it->second);
      result.runs.push_back({cell, seed, it->second});
      s.mean += it->second;
    }
    s.mean /= static_cast<double>(grid.seeds.size());
    if (!std::isfinite(s.mean)) s.mean = std::numeric_limits<double>::infinity();
    result.cells.push_back(std::move(s));
  }
  for (std::size_t i = 1; i < result.cells.size(); ++i)
    if (result.cells[i].mean < result.cells[result.best].mean) result.best = i;
  return result;
}

inline void write_tuning_summary(const std::filesystem::path &p, const GridSpec &grid, const TuningResult &r) {
  auto os = io::open_out(p);
  os << "lr,lambda,layers,width";
  for (auto seed : grid.seeds) os << ",mae_seed" << seed;
  os << ",mean_mae_val,selected\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto &c = r.cells[i];
    os << io::fmt_double(c.cell.learning_rate) << ',' << io::fmt_double(c.cell.lambda) << ',' << c.cell.layers << ','
       << c.cell.width;
    for (double v : c.per_seed) os << ',' << io::fmt_double(v);
    os << ',' << io::fmt_double(c.mean) << ',' << (i == r.best ? 1 : 0) << '\n';
  }
}

struct GridSearchOptions {
  std::filesystem::path results_csv;  // empty: keep results in memory only
  std::size_t threads = thread_budget();
  std::function<void(const TuningRun &)> on_run;
};

inline TuningResult grid_search(const GridSpec &grid, std::span<const Trajectory> dataset, const TrainingConfig &base,
                                const GridSearchOptions &options = {}) {
  const SplitDataset split = split_primary(dataset);
  std::vector<TuningRun> done;
  if (!options.results_csv.empty()) done = read_tuning_results(options.results_csv);

  std::vector<TuningRun> todo;
  for (const auto &cell : grid.cells())
    for (auto seed : grid.seeds) {
      const bool finished = std::any_of(done.begin(), done.end(),
                                        [&](const TuningRun &r) { return r.cell == cell && r.seed == seed; });
      if (!finished) todo.push_back({cell, seed, 0.0});
    }

  const auto rewrite = [&](std::span<const TuningRun> rows) {
    auto os = io::open_out(options.results_csv);
    os << kTuningHeader << '\n';
    for (const auto &r : rows) os << tuning_row(r) << '\n';
  };
  std::ofstream sink;
  if (!options.results_csv.empty()) {
    rewrite(done);
    sink.open(options.results_csv, std::ios::app);
    if (!sink) throw io::IoError("cannot write " + options.results_csv.string());
  }
  std::mutex sink_mutex;

  parallel_for(
      todo.size(),
      [&](std::size_t i) {
        TuningRun &run = todo[i];
        run.mae_val = tuning_run(split, cell_config(base, run.cell, run.seed, grid.epochs));
        std::lock_guard lock(sink_mutex);
        if (sink.is_open()) sink << tuning_row(run) << '\n' << std::flush;
        if (options.on_run) options.on_run(run);
      },
      options.threads);

  done.insert(done.end(), todo.begin(), todo.end());
  auto result = summarize_tuning(grid, done);
  if (sink.is_open()) {
    sink.close();
    rewrite(result.runs);
  }
  return result;
}

}  // namespace bifurnode
