#pragma once

// Simulation-based bifurcation diagrams.
//
// For each alpha on a grid and each initial condition the field is integrated
// to t = 2000 with unit-time samples; the minimum and maximum of x over the
// last 500 samples summarise the long-run behaviour (equal for a fixed point,
// the oscillation envelope for a limit cycle). Diagrams of a learned field are
// compared with the true one through
//
//   MAE_bif = mean_a |x_max - x~_max| + mean_a |x_min - x~_min|
//
// on the (1, 0.01) row.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bifurnode/dynsys.hpp"
#include "bifurnode/model.hpp"
#include "bifurnode/odesolve.hpp"
#include "bifurnode/parallel.hpp"

namespace bifurnode {

inline constexpr StateVector kZeroIc{0.0, 0.0};
inline constexpr StateVector kReferenceIc{1.0, 0.01};
inline constexpr double kAlphaLow = 0.6;
inline constexpr double kAlphaHigh = 0.8;

enum class Regime { FixedPointCoexistence, LimitCycle, Collapse, Unknown };

inline const char *to_string(Regime r) {
  switch (r) {
    case Regime::FixedPointCoexistence: return "fixed-point";
    case Regime::LimitCycle: return "limit-cycle";
    case Regime::Collapse: return "collapse";
    case Regime::Unknown: return "unknown";
  }
  return "unknown";
}

inline Regime regime_from_string(const std::string &s) {
  if (s == "fixed-point") return Regime::FixedPointCoexistence;
  if (s == "limit-cycle") return Regime::LimitCycle;
  if (s == "collapse") return Regime::Collapse;
  return Regime::Unknown;
}

struct RegimeThresholds {
  double collapse = 0.05;  // x_max below this: collapsed
  double cycle = 0.01;     // x_max - x_min above this: oscillating
};

struct Extrema {
  double x_min = 0.0;
  double x_max = 0.0;
  bool valid = true;
  std::string error;
};

struct ScanSettings {
  std::size_t n_alphas = 500;
  std::vector<StateVector> ics = {kZeroIc, kReferenceIc};
  int t_end = 2000;
  int tail = 500;
  SolverConfig solver = SolverConfig::training();
  std::size_t threads = thread_budget();
};

struct BifurcationDiagram {
  std::vector<double> alphas;
  std::vector<StateVector> ics;
  std::vector<std::vector<Extrema>> entries;  // [ic][alpha]
  std::string field_id;

  std::optional<std::size_t> ic_index(const StateVector &ic) const {
    for (std::size_t i = 0; i < ics.size(); ++i)
      if (ics[i] == ic) return i;
    return std::nullopt;
  }

  const std::vector<Extrema> &row(const StateVector &ic) const {
    const auto i = ic_index(ic);
    if (!i) throw std::invalid_argument("diagram has no row for the requested initial condition");
    return entries[*i];
  }
};

// n points uniformly spaced strictly inside (0.6, 0.8).
inline std::vector<double> alpha_grid(std::size_t n, double lo = kAlphaLow, double hi = kAlphaHigh) {
  if (n < 2) throw std::invalid_argument("alpha_grid: need at least two values");
  std::vector<double> a(n);
  const double step = (hi - lo) / static_cast<double>(n + 1);
  for (std::size_t k = 0; k < n; ++k) a[k] = lo + static_cast<double>(k + 1) * step;
  return a;
}

template <class Field>
Extrema long_run_extrema(const Field &field, double alpha, const StateVector &ic, const SolverConfig &solver,
                         int t_end = 2000, int tail = 500) {
  Extrema e;
  try {
    const auto times = unit_sample_times(t_end);
    const auto result = integrate_dopri5(field, ic, alpha, times, solver);
    const std::size_t n = result.states.size();
    const std::size_t first = n - static_cast<std::size_t>(tail);
    e.x_min = std::numeric_limits<double>::infinity();
    e.x_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = first; i < n; ++i) {
      e.x_min = std::min(e.x_min, result.states[i].x);
      e.x_max = std::max(e.x_max, result.states[i].x);
    }
  } catch (const std::exception &ex) {
    e.valid = false;
    e.error = ex.what();
    e.x_min = e.x_max = std::numeric_limits<double>::quiet_NaN();
  }
  return e;
}

template <class Field>
BifurcationDiagram scan(const Field &field, const ScanSettings &settings, std::string field_id = {}) {
  if (settings.tail <= 0 || settings.tail > settings.t_end) throw std::invalid_argument("scan: bad tail window");
  BifurcationDiagram d;
  d.alphas = alpha_grid(settings.n_alphas);
  d.ics = settings.ics;
  d.field_id = std::move(field_id);
  d.entries.assign(d.ics.size(), std::vector<Extrema>(d.alphas.size()));
  const std::size_t n_a = d.alphas.size();
  parallel_for(
      d.ics.size() * n_a,
      [&](std::size_t k) {
        const std::size_t i = k / n_a, j = k % n_a;
        d.entries[i][j] = long_run_extrema(field, d.alphas[j], d.ics[i], settings.solver, settings.t_end, settings.tail);
      },
      settings.threads);
  return d;
}

struct MaeBif {
  double max_term = 0.0;
  double min_term = 0.0;
  double total = 0.0;
};

// Infinite when any entry of the model row is invalid.
inline MaeBif mae_bif(const BifurcationDiagram &model, const BifurcationDiagram &truth,
                      const StateVector &ic = kReferenceIc) {
  if (model.alphas != truth.alphas) throw std::invalid_argument("mae_bif: alpha grids differ");
  const auto &m = model.row(ic);
  const auto &t = truth.row(ic);
  MaeBif out;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (!m[k].valid || !t[k].valid) {
      const double inf = std::numeric_limits<double>::infinity();
      return {inf, inf, inf};
    }
    out.max_term += std::abs(t[k].x_max - m[k].x_max);
    out.min_term += std::abs(t[k].x_min - m[k].x_min);
  }
  out.max_term /= static_cast<double>(m.size());
  out.min_term /= static_cast<double>(m.size());
  out.total = out.max_term + out.min_term;
  return out;
}

inline Regime classify(const Extrema &e, const RegimeThresholds &th = {}) {
  if (!e.valid) return Regime::Unknown;
  if (e.x_max < th.collapse) return Regime::Collapse;
  if (e.x_max - e.x_min > th.cycle) return Regime::LimitCycle;
  return Regime::FixedPointCoexistence;
}

inline std::vector<Regime> classify_regimes(const BifurcationDiagram &d, const RegimeThresholds &th = {},
                                            const StateVector &ic = kReferenceIc) {
  std::vector<Regime> labels;
  for (const auto &e : d.row(ic)) labels.push_back(classify(e, th));
  return labels;
}

struct RegimeBoundaries {
  std::optional<double> oscillation_onset;  // first alpha labelled LimitCycle
  std::optional<double> first_collapse;     // first alpha labelled Collapse
  std::optional<double> collapse_boundary;  // start of the trailing all-Collapse run
  std::size_t contiguous_intervals = 0;     // number of label runs
};

inline RegimeBoundaries regime_boundaries(std::span<const double> alphas, std::span<const Regime> labels) {
  RegimeBoundaries b;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (!b.oscillation_onset && labels[k] == Regime::LimitCycle) b.oscillation_onset = alphas[k];
    if (!b.first_collapse && labels[k] == Regime::Collapse) b.first_collapse = alphas[k];
    if (k == 0 || labels[k] != labels[k - 1]) ++b.contiguous_intervals;
  }
  if (!labels.empty() && labels.back() == Regime::Collapse) {
    std::size_t k = labels.size();
    while (k > 0 && labels[k - 1] == Regime::Collapse) --k;
    b.collapse_boundary = alphas[k];
  }
  return b;
}

inline bool has_all_three_regimes(std::span<const Regime> labels) {
  const auto has = [&](Regime r) { return std::find(labels.begin(), labels.end(), r) != labels.end(); };
  return has(Regime::FixedPointCoexistence) && has(Regime::LimitCycle) && has(Regime::Collapse);
}

struct SeedTable {
  std::vector<double> mae;  // per candidate, +inf when invalid
  std::size_t best = 0;
  double mean = 0.0;        // over finite entries
  double stddev = 0.0;      // population standard deviation over finite entries
  std::size_t finite_count = 0;
};

inline SeedTable summarize_mae(std::span<const double> mae) {
  SeedTable t;
  t.mae.assign(mae.begin(), mae.end());
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t i = 0; i < mae.size(); ++i) {
    if (!std::isfinite(mae[i])) continue;
    ++t.finite_count;
    t.mean += mae[i];
    if (!found || mae[i] < best) {
      best = mae[i];
      t.best = i;
      found = true;
    }
  }
  if (!found) throw std::runtime_error("select_best_seed: every diagram is invalid");
  t.mean /= static_cast<double>(t.finite_count);
  double ss = 0.0;
  for (double v : mae)
    if (std::isfinite(v)) ss += (v - t.mean) * (v - t.mean);
  t.stddev = std::sqrt(ss / static_cast<double>(t.finite_count));
  return t;
}

// Scans every candidate field and picks the one with the lowest MAE_bif.
template <class Field>
SeedTable select_best_seed(std::span<const Field> fields, const BifurcationDiagram &truth,
                           const ScanSettings &settings, std::vector<BifurcationDiagram> *diagrams = nullptr) {
  if (fields.empty()) throw std::invalid_argument("select_best_seed: no candidates");
  std::vector<double> mae;
  for (const auto &f : fields) {
    auto d = scan(f, settings);
    mae.push_back(mae_bif(d, truth).total);
    if (diagrams) diagrams->push_back(std::move(d));
  }
  return summarize_mae(mae);
}

template <class Range>
SeedTable select_best_checkpoint(const Range &checkpoints, const BifurcationDiagram &truth,
                                 const ScanSettings &settings, std::vector<BifurcationDiagram> *diagrams = nullptr) {
  std::vector<NeuralField> fields;
  for (const ModelCheckpoint &c : checkpoints) fields.emplace_back(c.params);
  return select_best_seed(std::span<const NeuralField>(fields), truth, settings, diagrams);
}

}  // namespace bifurnode
