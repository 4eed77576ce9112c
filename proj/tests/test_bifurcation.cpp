#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "bifurnode/bifurcation.hpp"
#include "bifurnode/dynsys.hpp"

using namespace bifurnode;

namespace {

Extrema ex(double lo, double hi) {
  Extrema e;
  e.x_min = lo;
  e.x_max = hi;
  return e;
}

const BifurcationDiagram &true_scan() {
  static const BifurcationDiagram d = [] {
    ScanSettings s;
    s.n_alphas = 50;
    s.solver = SolverConfig::ground_truth();
    return scan(TrueField{}, s, "true");
  }();
  return d;
}

}  // namespace

TEST(AlphaGrid, StrictlyInsideInterval) {
  const auto a = alpha_grid(500);
  ASSERT_EQ(a.size(), 500u);
  EXPECT_GT(a.front(), 0.6);
  EXPECT_LT(a.back(), 0.8);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_NEAR(a[i] - a[i - 1], 0.2 / 501.0, 1e-12);
  EXPECT_THROW(alpha_grid(1), std::invalid_argument);
}

TEST(Classify, Thresholds) {
  const RegimeThresholds th;
  EXPECT_EQ(classify(ex(0.0, 0.04), th), Regime::Collapse);
  EXPECT_EQ(classify(ex(0.3, 0.305), th), Regime::FixedPointCoexistence);
  EXPECT_EQ(classify(ex(0.1, 0.6), th), Regime::LimitCycle);
  Extrema bad;
  bad.valid = false;
  EXPECT_EQ(classify(bad, th), Regime::Unknown);
  EXPECT_EQ(regime_from_string(to_string(Regime::LimitCycle)), Regime::LimitCycle);
  EXPECT_EQ(regime_from_string("bogus"), Regime::Unknown);
}

TEST(Boundaries, OnsetAndTrailingCollapse) {
  using R = Regime;
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  const std::vector<R> l{R::FixedPointCoexistence, R::LimitCycle, R::Collapse, R::LimitCycle, R::Collapse, R::Collapse};
  const auto b = regime_boundaries(a, l);
  EXPECT_EQ(b.oscillation_onset, 2.0);
  EXPECT_EQ(b.first_collapse, 3.0);
  EXPECT_EQ(b.collapse_boundary, 5.0);
  EXPECT_EQ(b.contiguous_intervals, 5u);
  EXPECT_TRUE(has_all_three_regimes(l));
  const std::vector<R> two{R::LimitCycle, R::LimitCycle};
  EXPECT_FALSE(has_all_three_regimes(two));
  EXPECT_FALSE(regime_boundaries(std::span<const double>(a).first(2), two).collapse_boundary.has_value());
}

TEST(TrueScan, OriginRowStaysCollapsed) {
  for (const auto &e : true_scan().row(kZeroIc)) {
    EXPECT_TRUE(e.valid);
    EXPECT_EQ(e.x_max, 0.0);
  }
}

TEST(TrueScan, RegimesMatchAnalyticStructure) {
  const auto &d = true_scan();
  const auto labels = classify_regimes(d);
  const auto b = regime_boundaries(d.alphas, labels);
  ASSERT_TRUE(b.oscillation_onset.has_value());
  ASSERT_TRUE(b.collapse_boundary.has_value());
  EXPECT_NEAR(*b.oscillation_onset, 0.67, 0.01);
  EXPECT_NEAR(*b.collapse_boundary, 0.71, 0.01);
  EXPECT_EQ(b.contiguous_intervals, 3u);
  EXPECT_TRUE(has_all_three_regimes(labels));
  for (std::size_t k = 0; k < d.alphas.size(); ++k) {
    if (d.alphas[k] < hopf_alpha() - 0.005) {
      EXPECT_EQ(labels[k], Regime::FixedPointCoexistence) << d.alphas[k];
    }
  }
}

TEST(TrueScan, FixedPointBranchMatchesCoexistencePoint) {
  const auto &d = true_scan();
  const auto &row = d.row(kReferenceIc);
  for (std::size_t k = 0; k < d.alphas.size(); ++k) {
    if (d.alphas[k] > 0.66) break;
    EXPECT_NEAR(row[k].x_max, 1.0 / 3.0, 1e-3);
    EXPECT_NEAR(row[k].x_min, 1.0 / 3.0, 1e-3);
  }
}

TEST(MaeBif, ZeroAgainstItselfAndInfiniteWhenInvalid) {
  const auto &d = true_scan();
  EXPECT_EQ(mae_bif(d, d).total, 0.0);
  auto broken = d;
  broken.entries[1][3].valid = false;
  EXPECT_TRUE(std::isinf(mae_bif(broken, d).total));
  auto other = d;
  other.alphas[0] += 1e-3;
  EXPECT_THROW(mae_bif(other, d), std::invalid_argument);
}

TEST(MaeBif, HandComputed) {
  BifurcationDiagram m, t;
  m.alphas = t.alphas = {0.61, 0.62};
  m.ics = t.ics = {kReferenceIc};
  t.entries = {{ex(0.3, 0.4), ex(0.1, 0.5)}};
  m.entries = {{ex(0.2, 0.4), ex(0.1, 0.8)}};
  const auto r = mae_bif(m, t);
  EXPECT_NEAR(r.min_term, 0.05, 1e-15);
  EXPECT_NEAR(r.max_term, 0.15, 1e-15);
  EXPECT_NEAR(r.total, 0.2, 1e-15);
}

TEST(SeedTable, PopulationStatistics) {
  const std::vector<double> v{0.1, 0.3, std::numeric_limits<double>::infinity(), 0.2};
  const auto t = summarize_mae(v);
  EXPECT_EQ(t.best, 0u);
  EXPECT_EQ(t.finite_count, 3u);
  EXPECT_NEAR(t.mean, 0.2, 1e-15);
  EXPECT_NEAR(t.stddev, std::sqrt(0.02 / 3.0), 1e-15);
  const std::vector<double> none{std::numeric_limits<double>::infinity()};
  EXPECT_THROW(summarize_mae(none), std::runtime_error);
}

TEST(SeedTable, PicksBestField) {
  ScanSettings s;
  s.n_alphas = 4;
  s.t_end = 300;
  s.tail = 100;
  s.ics = {kReferenceIc};
  const auto truth = scan(TrueField{}, s);
  const auto zero = zero_params(uniform_layout(1, 4));
  const auto rnd = init_params(uniform_layout(1, 4), 3);
  const std::vector<ModelCheckpoint> ck{{zero, "", 0, {}}, {rnd, "", 0, {}}};
  std::vector<BifurcationDiagram> diagrams;
  const auto t = select_best_checkpoint(ck, truth, s, &diagrams);
  ASSERT_EQ(diagrams.size(), 2u);
  EXPECT_EQ(t.mae.size(), 2u);
  EXPECT_EQ(t.mae[t.best], std::min(t.mae[0], std::isfinite(t.mae[1]) ? t.mae[1] : t.mae[0]));
}

TEST(Scan, RejectsBadTail) {
  ScanSettings s;
  s.tail = 0;
  EXPECT_THROW(scan(TrueField{}, s), std::invalid_argument);
}
