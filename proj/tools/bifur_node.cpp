// bifur-node: data generation, training, tuning, diagram scans, evaluation,
// experiment reports and plots.
//
// Exit codes: 0 success, 1 usage error, 2 numerical failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bifurnode/bifurcation.hpp"
#include "bifurnode/dynsys.hpp"
#include "bifurnode/experiments.hpp"
#include "bifurnode/io.hpp"
#include "bifurnode/svg.hpp"
#include "bifurnode/training.hpp"
#include "bifurnode/tuning.hpp"

namespace fs = std::filesystem;
using namespace bifurnode;

namespace {

constexpr int kUsageError = 1;
constexpr int kNumericalError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_manifest(const fs::path &dir, const std::string &command, const std::map<std::string, std::string> &kv) {
  auto os = io::open_out(dir / "manifest.txt");
  os << "command = " << command << '\n' << "rng = " << kRngAlgorithm << '\n';
  for (const auto &[k, v] : kv) os << k << " = " << v << '\n';
}

std::string join_args(int argc, char **argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

ScanSettings scan_settings(std::size_t n_alphas, int t_end, int tail, bool true_system, bool reference_only) {
  ScanSettings s;
  s.n_alphas = n_alphas;
  s.t_end = t_end;
  s.tail = tail;
  if (true_system) s.solver = SolverConfig::ground_truth();
  if (reference_only) s.ics = {kReferenceIc};
  return s;
}

std::vector<fs::path> checkpoint_files(const fs::path &dir) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(dir)) return {dir};
  if (!fs::is_directory(dir)) throw UsageError("no such checkpoint file or directory: " + dir.string());
  for (const auto &e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError("no .json checkpoints in " + dir.string());
  return out;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Learn parameter-conditioned vector fields and reconstruct bifurcation diagrams"};
  app.require_subcommand(1);
  const std::string invocation = join_args(argc, argv);

  // generate-data
  auto *gen = app.add_subcommand("generate-data", "Simulate an experiment's dataset to CSV");
  std::string gen_experiment = "primary";
  fs::path gen_out = "out/data";
  gen->add_option("-e,--experiment", gen_experiment, "Experiment name from the registry")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "Output directory")->capture_default_str();

  // train
  auto *tr = app.add_subcommand("train", "Train a vector field on a dataset CSV");
  fs::path tr_data, tr_config, tr_out = "out/train";
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_epochs;
  std::optional<double> tr_lr, tr_lambda;
  std::optional<std::string> tr_mode;
  bool tr_quiet = false;
  tr->add_option("-d,--data", tr_data, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("-c,--config", tr_config, "Key-value training configuration")->check(CLI::ExistingFile);
  tr->add_option("-s,--seed", tr_seed, "Run seed");
  tr->add_option("--epochs", tr_epochs, "Number of epochs");
  tr->add_option("--lr", tr_lr, "Learning rate");
  tr->add_option("--lambda", tr_lambda, "Physics-loss weight");
  tr->add_option("--epoch-mode", tr_mode, "single-batch or full-pass");
  tr->add_option("-o,--out", tr_out, "Output directory")->capture_default_str();
  tr->add_flag("-q,--quiet", tr_quiet, "No progress output");

  // tune
  auto *tu = app.add_subcommand("tune", "Grid search over learning rate, lambda, depth and width");
  fs::path tu_data, tu_config, tu_out = "out/tune";
  std::size_t tu_epochs = GridSpec{}.epochs;
  bool tu_dry = false;
  tu->add_option("-d,--data", tu_data, "Primary dataset CSV")->check(CLI::ExistingFile);
  tu->add_option("-c,--config", tu_config, "Base training configuration")->check(CLI::ExistingFile);
  tu->add_option("--epochs", tu_epochs, "Epochs per run")->capture_default_str();
  tu->add_option("-o,--out", tu_out, "Output directory")->capture_default_str();
  tu->add_flag("--dry-run", tu_dry, "List the grid cells and exit");

  // bifdiag
  auto *bd = app.add_subcommand("bifdiag", "Scan a bifurcation diagram");
  fs::path bd_ckpt, bd_out = "out/bifdiag";
  bool bd_true = false, bd_ref_only = false;
  std::size_t bd_alphas = 500;
  int bd_t_end = 2000, bd_tail = 500;
  RegimeThresholds bd_th;
  auto *bd_src = bd->add_option("--checkpoint", bd_ckpt, "Checkpoint JSON")->check(CLI::ExistingFile);
  bd->add_flag("--true-system", bd_true, "Scan the ground-truth system")->excludes(bd_src);
  bd->add_option("--alphas", bd_alphas, "Number of alpha values")->capture_default_str();
  bd->add_option("--t-end", bd_t_end, "Integration horizon")->capture_default_str();
  bd->add_option("--tail", bd_tail, "Samples in the extrema window")->capture_default_str();
  bd->add_option("--collapse-threshold", bd_th.collapse)->capture_default_str();
  bd->add_option("--cycle-threshold", bd_th.cycle)->capture_default_str();
  bd->add_flag("--reference-ic-only", bd_ref_only, "Scan only the (1, 0.01) initial condition");
  bd->add_option("-o,--out", bd_out, "Output directory")->capture_default_str();

  // evaluate
  auto *ev = app.add_subcommand("evaluate", "MAE_bif of checkpoints against the true system");
  fs::path ev_ckpts, ev_truth, ev_out = "out/evaluate";
  std::size_t ev_alphas = 500;
  bool ev_include_true = false;
  ev->add_option("--checkpoints", ev_ckpts, "Checkpoint file or directory")->required();
  ev->add_option("--truth", ev_truth, "Precomputed true-system diagram CSV")->check(CLI::ExistingFile);
  ev->add_option("--alphas", ev_alphas, "Number of alpha values")->capture_default_str();
  ev->add_flag("--include-true", ev_include_true, "Add the true system itself as a candidate");
  ev->add_option("-o,--out", ev_out, "Output directory")->capture_default_str();

  // report
  auto *rp = app.add_subcommand("report", "Run an experiment end to end over its seeds");
  std::string rp_experiment = "primary";
  fs::path rp_out;
  std::optional<std::size_t> rp_epochs;
  std::optional<std::string> rp_mode;
  std::vector<std::uint64_t> rp_seeds;
  std::size_t rp_alphas = 500;
  bool rp_ref_only = false;
  rp->add_option("-e,--experiment", rp_experiment, "Experiment name")->capture_default_str();
  rp->add_option("--epochs", rp_epochs, "Override training epochs");
  rp->add_option("--epoch-mode", rp_mode, "single-batch or full-pass");
  rp->add_option("--seeds", rp_seeds, "Seeds (default 0..4)");
  rp->add_option("--alphas", rp_alphas, "Number of alpha values per scan")->capture_default_str();
  rp->add_flag("--reference-ic-only", rp_ref_only, "Scan learned fields only from (1, 0.01)");
  rp->add_option("-o,--out", rp_out, "Output directory (default out/<experiment>)");

  // plot
  auto *pl = app.add_subcommand("plot", "Render an SVG figure");
  std::string pl_kind;
  std::vector<fs::path> pl_inputs;
  fs::path pl_out = "plot.svg", pl_ckpt;
  double pl_alpha = 0.75;
  bool pl_true = false;
  std::vector<int> pl_series;
  pl->add_option("-k,--kind", pl_kind, "bifurcation-diagram, vector-field, timeseries or loss-curve")
      ->required()
      ->check(CLI::IsMember({"bifurcation-diagram", "vector-field", "timeseries", "loss-curve"}));
  pl->add_option("-i,--input", pl_inputs, "Input CSV file(s)")->check(CLI::ExistingFile);
  pl->add_option("--checkpoint", pl_ckpt, "Checkpoint for vector-field plots")->check(CLI::ExistingFile);
  pl->add_flag("--true-system", pl_true, "Vector field of the true system");
  pl->add_option("--alpha", pl_alpha, "Alpha for vector-field plots")->capture_default_str();
  pl->add_option("--series", pl_series, "Series ids to include in a timeseries plot");
  pl->add_option("-o,--out", pl_out, "Output SVG")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen) {
      const auto &spec = find_experiment(gen_experiment);
      write_manifest(gen_out, "generate-data",
                     {{"invocation", invocation}, {"experiment", spec.name}, {"noise_sigma", io::fmt_double(spec.noise_sigma)},
                      {"noise_seed", "derive_seed(\"" + spec.name + "\", series_id)"},
                      {"file", spec.name + ".csv"}});
      const auto data = build_dataset(spec);
      io::write_trajectories(gen_out / (spec.name + ".csv"), data);
      std::cout << "wrote " << data.size() << " series to " << (gen_out / (spec.name + ".csv")).string() << '\n';
      return 0;
    }

    if (*tr) {
      TrainingConfig cfg;
      if (!tr_config.empty()) cfg = io::read_training_config(tr_config);
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_lr) cfg.learning_rate = *tr_lr;
      if (tr_lambda) cfg.lambda = *tr_lambda;
      if (tr_mode) cfg.epoch_mode = epoch_mode_from_string(*tr_mode);
      cfg.validate();
      const auto data = io::read_trajectories(tr_data);
      write_manifest(tr_out, "train",
                     {{"invocation", invocation}, {"data", tr_data.string()}, {"config", cfg.canonical()},
                      {"config_digest", cfg.digest()}, {"files", "checkpoint.json loss.csv loss.svg"}});
      const std::size_t every = std::max<std::size_t>(1, cfg.epochs / 20);
      const auto result = train(data, cfg, [&](const LossRecord &r) {
        if (!tr_quiet && (r.epoch % every == 0 || r.epoch == cfg.epochs))
          std::clog << "epoch " << r.epoch << " data " << r.loss.data_mae << " physics " << r.loss.physics_term
                    << " total " << r.loss.total << '\n';
      });
      io::write_checkpoint(tr_out / "checkpoint.json", result.checkpoint);
      io::write_loss_history(tr_out / "loss.csv", result.history);
      if (!result.history.empty()) svg::write_text(tr_out / "loss.svg", svg::loss_plot(result.history));
      if (result.skipped_batches) std::clog << "skipped batches: " << result.skipped_batches << '\n';
      std::cout << "wrote " << (tr_out / "checkpoint.json").string() << '\n';
      return 0;
    }

    if (*tu) {
      GridSpec grid;
      grid.epochs = tu_epochs;
      if (tu_dry) {
        std::cout << "lr,lambda,layers,width\n";
        for (const auto &c : grid.cells())
          std::cout << io::fmt_double(c.learning_rate) << ',' << io::fmt_double(c.lambda) << ',' << c.layers << ','
                    << c.width << '\n';
        std::cout << grid.cells().size() << " cells, " << grid.run_count() << " runs\n";
        return 0;
      }
      if (tu_data.empty()) throw UsageError("tune: --data is required unless --dry-run is given");
      TrainingConfig base;
      if (!tu_config.empty()) base = io::read_training_config(tu_config);
      write_manifest(tu_out, "tune",
                     {{"invocation", invocation}, {"data", tu_data.string()}, {"base_config", base.canonical()},
                      {"epochs", std::to_string(grid.epochs)}, {"files", "results.csv summary.csv"}});
      const auto data = io::read_trajectories(tu_data);
      GridSearchOptions opt;
      opt.results_csv = tu_out / "results.csv";
      opt.on_run = [](const TuningRun &r) { std::clog << tuning_row(r) << '\n'; };
      const auto result = grid_search(grid, data, base, opt);
      write_tuning_summary(tu_out / "summary.csv", grid, result);
      const auto &b = result.best_cell();
      std::cout << "best: lr " << b.cell.learning_rate << " lambda " << b.cell.lambda << " layers " << b.cell.layers
                << " width " << b.cell.width << " mean mae_val " << b.mean << '\n';
      return 0;
    }

    if (*bd) {
      if (!bd_true && bd_ckpt.empty()) throw UsageError("bifdiag: give --checkpoint or --true-system");
      const auto settings = scan_settings(bd_alphas, bd_t_end, bd_tail, bd_true, bd_ref_only);
      write_manifest(bd_out, "bifdiag",
                     {{"invocation", invocation}, {"field", bd_true ? "true" : bd_ckpt.string()},
                      {"n_alphas", std::to_string(bd_alphas)}, {"files", "diagram.csv diagram.svg"}});
      BifurcationDiagram d;
      if (bd_true) {
        d = scan(TrueField{}, settings, "true");
      } else {
        const auto ckpt = io::read_checkpoint(bd_ckpt);
        d = scan(NeuralField(ckpt.params), settings, bd_ckpt.stem().string());
      }
      io::write_diagram(bd_out / "diagram.csv", d, bd_th);
      svg::write_text(bd_out / "diagram.svg", svg::bifurcation_plot(std::span(&d, 1), kReferenceIc,
                                                                    "Bifurcation diagram (" + d.field_id + ")"));
      const auto labels = classify_regimes(d, bd_th);
      const auto b = regime_boundaries(d.alphas, labels);
      std::cout << "oscillation_onset " << (b.oscillation_onset ? io::fmt_double(*b.oscillation_onset) : "none")
                << "\ncollapse_boundary " << (b.collapse_boundary ? io::fmt_double(*b.collapse_boundary) : "none")
                << '\n';
      return 0;
    }

    if (*ev) {
      const auto files = checkpoint_files(ev_ckpts);
      write_manifest(ev_out, "evaluate",
                     {{"invocation", invocation}, {"checkpoints", ev_ckpts.string()},
                      {"n_alphas", std::to_string(ev_alphas)}, {"files", "mae_bif.csv"}});
      const BifurcationDiagram truth = ev_truth.empty()
                                           ? true_diagram(scan_settings(ev_alphas, 2000, 500, true, true))
                                           : io::read_diagram(ev_truth);
      const auto settings = scan_settings(truth.alphas.size(), 2000, 500, false, true);
      std::vector<std::string> names;
      std::vector<MaeBif> rows;
      for (const auto &f : files) {
        const auto c = io::read_checkpoint(f);
        BifurcationDiagram d = scan(NeuralField(c.params), settings, f.stem().string());
        if (d.alphas != truth.alphas) throw UsageError("evaluate: truth diagram grid differs from --alphas");
        names.push_back(f.stem().string());
        rows.push_back(mae_bif(d, truth));
        io::write_diagram(ev_out / "diagrams" / (f.stem().string() + ".csv"), d);
      }
      if (ev_include_true) {
        names.push_back("true-system");
        rows.push_back(mae_bif(scan(TrueField{}, settings, "true-system"), truth));
      }
      std::vector<double> totals;
      for (const auto &r : rows) totals.push_back(r.total);
      const auto table = summarize_mae(totals);
      auto os = io::open_out(ev_out / "mae_bif.csv");
      os << "field,mae_max,mae_min,mae_bif\n";
      for (std::size_t i = 0; i < rows.size(); ++i)
        os << names[i] << ',' << io::fmt_double(rows[i].max_term) << ',' << io::fmt_double(rows[i].min_term) << ','
           << io::fmt_double(rows[i].total) << '\n';
      os << "mean,,," << io::fmt_double(table.mean) << '\n'
         << "std,,," << io::fmt_double(table.stddev) << '\n'
         << "best," << names[table.best] << ",," << io::fmt_double(totals[table.best]) << '\n';
      for (std::size_t i = 0; i < rows.size(); ++i) std::cout << names[i] << ' ' << rows[i].total << '\n';
      std::cout << "mean " << table.mean << " std " << table.stddev << " best " << names[table.best] << '\n';
      return 0;
    }

    if (*rp) {
      ExperimentSpec spec = find_experiment(rp_experiment);
      if (rp_mode) spec.training.epoch_mode = epoch_mode_from_string(*rp_mode);
      ExperimentOptions opt;
      opt.epochs = rp_epochs;
      if (!rp_seeds.empty()) opt.seeds = rp_seeds;
      opt.scan = scan_settings(rp_alphas, 2000, 500, false, rp_ref_only);
      opt.truth_scan = scan_settings(rp_alphas, 2000, 500, true, false);
      opt.log = [](const std::string &m) { std::clog << m << '\n'; };
      const fs::path out = rp_out.empty() ? fs::path("out") / spec.name : rp_out;
      const auto report = run_experiment(spec, out, opt);
      for (const auto &s : report.seeds)
        std::cout << seed_tag(s.seed) << " mae_bif " << s.mae.total << (s.trained ? "" : " (failed)") << '\n';
      if (report.table) std::cout << "mean " << report.table->mean << " std " << report.table->stddev << '\n';
      return report.table ? 0 : kNumericalError;
    }

    if (*pl) {
      if (pl_kind == "bifurcation-diagram") {
        if (pl_inputs.empty()) throw UsageError("plot: --input diagram CSV(s) required");
        std::vector<BifurcationDiagram> ds;
        for (const auto &p : pl_inputs) ds.push_back(io::read_diagram(p));
        svg::write_text(pl_out, svg::bifurcation_plot(ds));
      } else if (pl_kind == "vector-field") {
        std::vector<svg::FieldSample> samples;
        std::vector<StateVector> traj;
        const auto times = unit_sample_times(100);
        if (pl_true) {
          samples = svg::sample_field(TrueField{}, pl_alpha);
          traj = integrate_dopri5(TrueField{}, kReferenceIc, pl_alpha, times, SolverConfig::ground_truth()).states;
        } else {
          if (pl_ckpt.empty()) throw UsageError("plot: vector-field needs --checkpoint or --true-system");
          const auto c = io::read_checkpoint(pl_ckpt);
          const NeuralField f(c.params);
          samples = svg::sample_field(f, pl_alpha);
          traj = integrate_dopri5(f, kReferenceIc, pl_alpha, times, SolverConfig::training()).states;
        }
        auto csv = io::open_out(fs::path(pl_out).replace_extension(".csv"));
        svg::write_field_csv(csv, pl_alpha, samples);
        svg::write_text(pl_out, svg::vector_field_plot(samples, pl_alpha, traj));
      } else if (pl_kind == "timeseries") {
        if (pl_inputs.size() != 1) throw UsageError("plot: timeseries takes one --input trajectory CSV");
        auto data = io::read_trajectories(pl_inputs.front());
        if (!pl_series.empty()) {
          std::erase_if(data, [&](const Trajectory &t) {
            return std::find(pl_series.begin(), pl_series.end(), t.series_id) == pl_series.end();
          });
        }
        svg::write_text(pl_out, svg::timeseries_plot(data));
      } else {
        if (pl_inputs.size() != 1) throw UsageError("plot: loss-curve takes one --input loss CSV");
        svg::write_text(pl_out, svg::loss_plot(io::read_loss_history(pl_inputs.front())));
      }
      std::cout << "wrote " << pl_out.string() << '\n';
      return 0;
    }
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const io::FormatError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const io::IoError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const TrainingError &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const SolverError &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalError;
  }
  return 0;
}
