#pragma once

// Experiment registry and orchestration: dataset construction for every
// experiment, training over several seeds, diagram scans against the true
// system and the MAE_bif summary.
//
// Output layout of run_experiment(spec, dir):
//   dir/manifest.txt          written before training starts, rewritten at the end
//   dir/data/dataset.csv
//   dir/checkpoints/seed<k>.json, seed<k>_loss.csv
//   dir/diagrams/true.csv, seed<k>.csv, diagram.svg
//   dir/report.txt

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifurnode/bifurcation.hpp"
#include "bifurnode/dynsys.hpp"
#include "bifurnode/io.hpp"
#include "bifurnode/parallel.hpp"
#include "bifurnode/rng.hpp"
#include "bifurnode/svg.hpp"
#include "bifurnode/training.hpp"

namespace bifurnode {

struct ExperimentSpec {
  std::string name;
  std::string description;
  std::vector<double> alphas;
  std::vector<StateVector> initial_conditions;
  double noise_sigma = 0.0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  TrainingConfig training;
  int t_end = 100;

  std::size_t series_count() const { return alphas.size() * initial_conditions.size(); }

  void validate() const {
    if (name.empty()) throw std::invalid_argument("ExperimentSpec: empty name");
    if (alphas.empty() || initial_conditions.empty()) throw std::invalid_argument("ExperimentSpec " + name + ": no series");
    for (double a : alphas)
      if (!(a > kAlphaLow && a < kAlphaHigh)) throw std::invalid_argument("ExperimentSpec " + name + ": alpha outside (0.6, 0.8)");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("ExperimentSpec " + name + ": negative noise");
    if (seeds.empty()) throw std::invalid_argument("ExperimentSpec " + name + ": no seeds");
    training.validate();
  }
};

inline std::vector<double> alpha_range(double first, double step, std::size_t count) {
  std::vector<double> a;
  for (std::size_t i = 0; i < count; ++i) a.push_back(std::round((first + step * static_cast<double>(i)) * 1e6) / 1e6);
  return a;
}

inline const std::vector<StateVector> &primary_initial_conditions() {
  static const std::vector<StateVector> ics = {{1.0, 0.01}, {1.0, 0.1}};
  return ics;
}

inline const std::vector<ExperimentSpec> &registry() {
  static const std::vector<ExperimentSpec> specs = [] {
    const auto primary_alphas = alpha_range(0.62, 0.02, 5);
    const auto &ics = primary_initial_conditions();
    std::vector<ExperimentSpec> s;
    const auto add = [&s](std::string name, std::string description, std::vector<double> alphas,
                          std::vector<StateVector> ic, double sigma = 0.0) {
      ExperimentSpec e;
      e.name = std::move(name);
      e.description = std::move(description);
      e.alphas = std::move(alphas);
      e.initial_conditions = std::move(ic);
      e.noise_sigma = sigma;
      s.push_back(std::move(e));
    };
    add("primary", "regimes A and B, two initial conditions", primary_alphas, ics);
    add("exp1-onlyB", "limit-cycle regime only", alpha_range(0.68, 0.005, 5), ics);
    add("exp1-onlyA", "stable-focus regime only", alpha_range(0.61, 0.01, 5), ics);
    add("exp2-3alphas", "three alpha values", {0.62, 0.66, 0.70}, ics);
    add("exp2-singleIC", "one initial condition per alpha", primary_alphas, {{1.0, 0.1}});
    add("exp3-lownoise", "primary data with sigma = 0.05", primary_alphas, ics, 0.05);
    add("exp3-highnoise", "primary data with sigma = 0.2", primary_alphas, ics, 0.2);
    add("appD-increased", "ten alpha values, 20 series", alpha_range(0.61, 0.01, 10), ics);
    return s;
  }();
  return specs;
}

inline const ExperimentSpec &find_experiment(const std::string &name) {
  for (const auto &s : registry())
    if (s.name == name) return s;
  std::string known;
  for (const auto &s : registry()) known += (known.empty() ? "" : ", ") + s.name;
  throw std::invalid_argument("unknown experiment '" + name + "' (known: " + known + ")");
}

// Series are ordered by alpha, then initial condition; series_id is the
// position. The noise seed of series i is derive_seed(spec.name, i).
inline std::vector<Trajectory> build_dataset(const ExperimentSpec &spec) {
  spec.validate();
  std::vector<double> alphas = spec.alphas;
  std::sort(alphas.begin(), alphas.end());
  const auto times = unit_sample_times(spec.t_end);
  std::vector<Trajectory> out;
  int id = 0;
  for (double a : alphas) {
    for (const auto &ic : spec.initial_conditions) {
      auto clean = simulate_true(ic, a, times, SolverConfig::ground_truth(), id);
      out.push_back(add_noise(clean, spec.noise_sigma, derive_seed(spec.name, static_cast<std::uint64_t>(id))));
      ++id;
    }
  }
  return out;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool trained = false;
  std::string error;
  double final_data_mae = std::numeric_limits<double>::quiet_NaN();
  double final_physics = std::numeric_limits<double>::quiet_NaN();
  MaeBif mae{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
  RegimeBoundaries boundaries;
  bool all_three_regimes = false;
  double train_seconds = 0.0;
  double scan_seconds = 0.0;
};

struct ExperimentReport {
  std::string name;
  std::vector<SeedOutcome> seeds;
  std::optional<SeedTable> table;  // absent when every seed failed
  bool complete = true;

  const SeedOutcome &best() const {
    if (!table) throw std::runtime_error("experiment " + name + ": no successful seed");
    return seeds.at(table->best);
  }
};

struct ExperimentOptions {
  std::optional<std::size_t> epochs;     // overrides spec.training.epochs
  ScanSettings scan;                     // learned-field scans
  ScanSettings truth_scan = [] {
    ScanSettings s;
    s.solver = SolverConfig::ground_truth();
    return s;
  }();
  const BifurcationDiagram *truth = nullptr;  // reuse a precomputed reference scan
  RegimeThresholds thresholds;
  std::size_t threads = thread_budget();  // seeds trained concurrently
  std::optional<std::vector<std::uint64_t>> seeds;
  bool write_plots = true;
  std::function<void(const std::string &)> log;
};

inline std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

namespace detail {

inline void write_manifest(const std::filesystem::path &dir, const ExperimentSpec &spec, const TrainingConfig &cfg,
                           std::span<const std::uint64_t> seeds, const ExperimentOptions &opt,
                           const std::map<std::string, double> &timings) {
  auto os = io::open_out(dir / "manifest.txt");
  os << "experiment = " << spec.name << '\n' << "description = " << spec.description << '\n' << "alphas = ";
  for (std::size_t i = 0; i < spec.alphas.size(); ++i) os << (i ? "," : "") << io::fmt_double(spec.alphas[i]);
  os << '\n' << "initial_conditions = ";
  for (std::size_t i = 0; i < spec.initial_conditions.size(); ++i)
    os << (i ? ";" : "") << io::fmt_double(spec.initial_conditions[i].x) << ','
       << io::fmt_double(spec.initial_conditions[i].y);
  os << '\n'
     << "noise_sigma = " << io::fmt_double(spec.noise_sigma) << '\n'
     << "noise_seed = derive_seed(\"" << spec.name << "\", series_id)\n"
     << "rng = " << kRngAlgorithm << '\n'
     << "seeds = ";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << '\n';
  for (auto seed : seeds) {
    TrainingConfig c = cfg;
    c.seed = seed;
    os << "config_digest." << seed_tag(seed) << " = " << c.digest() << '\n';
  }
  os << "training = " << cfg.canonical() << '\n'
     << "scan = n_alphas=" << opt.scan.n_alphas << ";t_end=" << opt.scan.t_end << ";tail=" << opt.scan.tail
     << ";rtol=" << io::fmt_double(opt.scan.solver.rtol) << ";atol=" << io::fmt_double(opt.scan.solver.atol)
     << ";ics=" << opt.scan.ics.size() << '\n'
     << "thresholds = collapse=" << io::fmt_double(opt.thresholds.collapse)
     << ";cycle=" << io::fmt_double(opt.thresholds.cycle) << '\n'
     << "files = data/dataset.csv checkpoints/ diagrams/ report.txt\n";
  for (const auto &[k, v] : timings) os << "wall_seconds." << k << " = " << v << '\n';
}

inline std::string opt_alpha(const std::optional<double> &a) { return a ? io::fmt_double(*a) : "none"; }

}  // namespace detail

inline void write_report(const std::filesystem::path &p, const ExperimentReport &r) {
  auto os = io::open_out(p);
  os << "experiment = " << r.name << '\n' << "complete = " << (r.complete ? "yes" : "no") << '\n';
  os << "seed,trained,final_data_mae,final_physics,mae_max,mae_min,mae_bif,oscillation_onset,first_collapse,"
        "collapse_boundary,all_three_regimes,error\n";
  for (const auto &s : r.seeds) {
    os << s.seed << ',' << (s.trained ? 1 : 0) << ',' << io::fmt_double(s.final_data_mae) << ','
       << io::fmt_double(s.final_physics) << ',' << io::fmt_double(s.mae.max_term) << ','
       << io::fmt_double(s.mae.min_term) << ',' << io::fmt_double(s.mae.total) << ','
       << detail::opt_alpha(s.boundaries.oscillation_onset) << ',' << detail::opt_alpha(s.boundaries.first_collapse)
       << ',' << detail::opt_alpha(s.boundaries.collapse_boundary) << ',' << (s.all_three_regimes ? 1 : 0) << ','
       << '"' << s.error << '"' << '\n';
  }
  if (r.table) {
    os << "mean_mae_bif = " << io::fmt_double(r.table->mean) << '\n'
       << "std_mae_bif = " << io::fmt_double(r.table->stddev) << '\n'
       << "seeds_in_aggregate = " << r.table->finite_count << '\n'
       << "best_seed = " << r.seeds[r.table->best].seed << '\n';
  } else {
    os << "mean_mae_bif = nan\nstd_mae_bif = nan\nseeds_in_aggregate = 0\nbest_seed = none\n";
  }
}

inline BifurcationDiagram true_diagram(const ScanSettings &settings) {
  return scan(TrueField{}, settings, "true");
}

inline ExperimentReport run_experiment(const ExperimentSpec &spec, const std::filesystem::path &dir,
                                       const ExperimentOptions &opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  const auto log = [&](const std::string &m) {
    if (opt.log) opt.log(spec.name + ": " + m);
  };
  TrainingConfig cfg = spec.training;
  if (opt.epochs) cfg.epochs = *opt.epochs;
  const std::vector<std::uint64_t> seeds = opt.seeds ? *opt.seeds : spec.seeds;
  spec.validate();
  cfg.validate();

  std::map<std::string, double> timings;
  detail::write_manifest(dir, spec, cfg, seeds, opt, timings);

  const auto dataset = build_dataset(spec);
  io::write_trajectories(dir / "data" / "dataset.csv", dataset);

  ExperimentReport report;
  report.name = spec.name;
  report.seeds.resize(seeds.size());
  std::vector<std::optional<ModelCheckpoint>> checkpoints(seeds.size());

  const auto t_train = clock::now();
  parallel_for(
      seeds.size(),
      [&](std::size_t i) {
        SeedOutcome &out = report.seeds[i];
        out.seed = seeds[i];
        TrainingConfig c = cfg;
        c.seed = seeds[i];
        const auto t0 = clock::now();
        try {
          auto result = train(dataset, c);
          io::write_checkpoint(dir / "checkpoints" / (seed_tag(out.seed) + ".json"), result.checkpoint);
          io::write_loss_history(dir / "checkpoints" / (seed_tag(out.seed) + "_loss.csv"), result.history);
          if (!result.history.empty()) {
            out.final_data_mae = result.history.back().loss.data_mae;
            out.final_physics = result.history.back().loss.physics_term;
          }
          checkpoints[i] = std::move(result.checkpoint);
          out.trained = true;
        } catch (const TrainingError &e) {
          out.error = e.what();
        }
        out.train_seconds = seconds_since(t0);
      },
      opt.threads);
  timings["train"] = seconds_since(t_train);
  log("training done in " + std::to_string(timings["train"]) + " s");

  const auto t_truth = clock::now();
  std::optional<BifurcationDiagram> owned_truth;
  if (!opt.truth) owned_truth = true_diagram(opt.truth_scan);
  const BifurcationDiagram &truth = opt.truth ? *opt.truth : *owned_truth;
  timings["truth_scan"] = seconds_since(t_truth);
  io::write_diagram(dir / "diagrams" / "true.csv", truth, opt.thresholds);

  std::vector<BifurcationDiagram> diagrams{truth};
  std::vector<double> mae;
  const auto t_scan = clock::now();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    SeedOutcome &out = report.seeds[i];
    if (!checkpoints[i]) {
      report.complete = false;
      mae.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const auto t0 = clock::now();
    auto d = scan(NeuralField(checkpoints[i]->params), opt.scan, seed_tag(out.seed));
    io::write_diagram(dir / "diagrams" / (seed_tag(out.seed) + ".csv"), d, opt.thresholds);
    out.mae = mae_bif(d, truth);
    const auto labels = classify_regimes(d, opt.thresholds);
    out.boundaries = regime_boundaries(d.alphas, labels);
    out.all_three_regimes = has_all_three_regimes(labels);
    if (!std::isfinite(out.mae.total)) report.complete = false;
    mae.push_back(out.mae.total);
    out.scan_seconds = seconds_since(t0);
    diagrams.push_back(std::move(d));
    log(seed_tag(out.seed) + " mae_bif " + io::fmt_double(out.mae.total));
  }
  timings["scans"] = seconds_since(t_scan);

  if (std::any_of(mae.begin(), mae.end(), [](double v) { return std::isfinite(v); })) {
    report.table = summarize_mae(mae);
    if (opt.write_plots) {
      // Reference first, best seed second, the others grey.
      std::vector<BifurcationDiagram> ordered{diagrams.front()};
      const std::string best_id = seed_tag(report.seeds[report.table->best].seed);
      for (const auto &d : diagrams)
        if (d.field_id == best_id) ordered.push_back(d);
      for (std::size_t k = 1; k < diagrams.size(); ++k)
        if (diagrams[k].field_id != best_id) ordered.push_back(diagrams[k]);
      svg::write_text(dir / "diagrams" / "diagram.svg",
                      svg::bifurcation_plot(ordered, kReferenceIc, spec.name + ": true (black), best seed (blue)"));
    }
  }
  write_report(dir / "report.txt", report);
  detail::write_manifest(dir, spec, cfg, seeds, opt, timings);
  return report;
}

}  // namespace bifurnode
