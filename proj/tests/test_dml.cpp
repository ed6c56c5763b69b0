#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "odml/dml.hpp"
#include "odml/ols.hpp"
#include "odml/sim.hpp"
#include "test_util.hpp"

using namespace odml;
using odml::test::error_kind;

namespace {

LearnerSpec ridge(double lambda = 0) {
  LearnerSpec s;
  s.kind = LearnerKind::LinearRidge;
  s.ridge_lambda = lambda;
  return s;
}

LearnerSpec logistic(double lambda = 0) {
  LearnerSpec s;
  s.kind = LearnerKind::Logistic;
  s.ridge_lambda = lambda;
  return s;
}

LearnerSpec mean_learner() {
  LearnerSpec s;
  s.kind = LearnerKind::Mean;
  return s;
}

DmlConfig linear_config(bool irm) {
  DmlConfig c;
  c.outcome_learner = ridge();
  c.treatment_learner = irm ? logistic() : ridge();
  c.threads = 1;
  return c;
}

DesignMatrix simulated(Index n, std::uint64_t seed, double base = -0.3, double selection = 1.0) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.effect.base = base;
  cfg.selection_strength = selection;
  return build_design(simulate(cfg).data, simulation_design());
}

DesignMatrix random_design(Index n, std::uint64_t seed) {
  DesignSpec spec;
  spec.band_km = std::numeric_limits<double>::infinity();
  return build_design(test::random_dataset(n, seed, 12), spec);
}

}  // namespace

// ---------------------------------------------------------------------------
// Folds

TEST(Folds, BalancedPartition) {
  for (auto [n, k] : {std::pair<Index, int>{10, 3}, {11, 5}, {100, 2}, {7, 7}}) {
    const FoldPlan p = make_folds(n, k, 42);
    ASSERT_EQ(p.assignment.size(), static_cast<std::size_t>(n));
    Index total = 0;
    for (int f = 0; f < k; ++f) {
      const auto test = p.test_rows(f), train = p.train_rows(f);
      EXPECT_EQ(static_cast<Index>(test.size() + train.size()), n);
      EXPECT_TRUE(test.size() == static_cast<std::size_t>(n / k) ||
                  test.size() == static_cast<std::size_t>(n / k + 1));
      std::vector<Index> all = test;
      all.insert(all.end(), train.begin(), train.end());
      std::sort(all.begin(), all.end());
      EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
      total += static_cast<Index>(test.size());
    }
    EXPECT_EQ(total, n);
  }
  EXPECT_EQ(make_folds(50, 5, 1).assignment, make_folds(50, 5, 1).assignment);
  EXPECT_NE(make_folds(50, 5, 1).assignment, make_folds(50, 5, 2).assignment);
  EXPECT_EQ(error_kind([] { make_folds(10, 1, 0); }), "BadFoldCount");
  EXPECT_EQ(error_kind([] { make_folds(3, 4, 0); }), "BadFoldCount");
}

// ---------------------------------------------------------------------------
// Score algebra

TEST(ScoreVariance, Examples) {
  Vector psi(4);
  psi << 1, -1, 1, -1;
  EXPECT_DOUBLE_EQ(score_variance(psi, -1), 0.5);
  EXPECT_DOUBLE_EQ(score_variance(psi, 2), 0.25);
  EXPECT_EQ(error_kind([&] { score_variance(psi, 0); }), "ZeroJacobian");
  EXPECT_EQ(error_kind([] { score_variance(Vector::Ones(1), 1); }), "NotEnoughRows");

  const std::vector<std::string> single = {"a", "b", "c", "d"};
  EXPECT_DOUBLE_EQ(cluster_score_variance(psi, -1, single), 0.5);
  // Pairs cancel inside each cluster.
  EXPECT_DOUBLE_EQ(cluster_score_variance(psi, -1, {"a", "a", "b", "b"}), 0.0);
  EXPECT_DOUBLE_EQ(cluster_score_variance(Vector::Ones(4), 1, {"a", "a", "b", "b"}), std::sqrt(8.0) / 4);
}

TEST(Scores, ClosedForms) {
  Vector y(3), d(3), l(3), m(3), g0(3), g1(3);
  y << 1, 2, 3;
  d << 1, 0, 1;
  l << 0.5, 1.5, 2;
  m << 0.6, 0.3, 0.8;
  g0 << 0.2, 1.9, 2.5;
  g1 << 1.1, 2.2, 2.9;
  const LinearScore plr = plr_score(y, d, l, m);
  EXPECT_DOUBLE_EQ(plr.a(1), -0.09);
  EXPECT_DOUBLE_EQ(plr.b(0), 0.5 * 0.4);
  const LinearScore ate = irm_ate_score(y, d, g0, g1, m);
  EXPECT_DOUBLE_EQ(ate.a(2), -1);
  EXPECT_NEAR(ate.b(1), 0.3 - 0.1 / 0.7, 1e-15);
  EXPECT_NEAR(ate.b(0), 0.9 - 0.1 / 0.6, 1e-15);
  const LinearScore att = irm_atte_score(y, d, g0, m, 2.0 / 3);
  EXPECT_DOUBLE_EQ(att.a(1), 0);
  EXPECT_NEAR(att.a(0), -1.5, 1e-15);
  EXPECT_NEAR(att.b(1), -0.3 * 0.1 / 0.7 * 1.5, 1e-15);
}

// ---------------------------------------------------------------------------
// Estimator identities

TEST(Plr, NoSplitLinearLearnersReproduceOls) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const DesignMatrix dm = random_design(150 + 10 * static_cast<Index>(s), s);
    DmlConfig cfg = linear_config(false);
    cfg.no_split = true;
    const EffectEstimate e = dml_plr(dm, cfg);
    EXPECT_NEAR(e.theta, ols_fit(dm).beta(0), 1e-8);
  }
}

TEST(Plr, EstimatingEquationSolved) {
  const DesignMatrix dm = simulated(600, 3);
  for (auto est : {Estimand::PLR, Estimand::IrmAte, Estimand::IrmAtte}) {
    const EffectEstimate e = estimate(dm, linear_config(est != Estimand::PLR), est);
    EXPECT_LT(std::abs(e.psi.mean()), 1e-10) << estimand_name(est);
    EXPECT_EQ(e.psi.size(), 600);
    EXPECT_GT(e.se, 0);
    EXPECT_NEAR(e.ci95[0], e.theta - 1.96 * e.se, 1e-12);
    EXPECT_EQ(e.fold_diagnostics.size(), 5u);
  }
}

TEST(Plr, MeanLearnersGiveDifferenceInMeans) {
  const DesignMatrix dm = random_design(300, 7);
  DmlConfig cfg;
  cfg.outcome_learner = mean_learner();
  cfg.treatment_learner = mean_learner();
  cfg.no_split = true;
  const double dim = diff_in_means(dm.y, dm.d).theta;
  EXPECT_NEAR(dml_plr(dm, cfg).theta, dim, 1e-8);
  cfg.treatment_learner = logistic();
  EXPECT_EQ(error_kind([&] { dml_plr(dm, cfg); }), "none");
}

TEST(Irm, InterceptOnlyLearnersGiveDifferenceInMeans) {
  const DesignMatrix dm = random_design(300, 8);
  DmlConfig cfg;
  cfg.outcome_learner = mean_learner();
  cfg.treatment_learner = logistic();
  cfg.no_split = true;
  DesignMatrix bare = dm;
  bare.x = Matrix::Ones(dm.rows(), 1);
  bare.column_names = {"intercept"};
  EXPECT_NEAR(dml_irm_ate(bare, cfg).theta, diff_in_means(dm.y, dm.d).theta, 1e-8);
  EXPECT_NEAR(dml_irm_atte(bare, cfg).theta, diff_in_means(dm.y, dm.d).theta, 1e-8);
}

TEST(Plr, FoldExchangeability) {
  const DesignMatrix dm = simulated(400, 9);
  const DmlConfig cfg = linear_config(false);
  const FoldPlan plan = make_folds(400, 4, 77);
  const double base = estimate(dm, cfg, Estimand::PLR, plan).theta;

  std::vector<Index> perm(400);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(5);
  shuffle_in_place(perm, rng);
  DesignMatrix p = dm;
  FoldPlan pp = plan;
  for (Index i = 0; i < 400; ++i) {
    p.y(i) = dm.y(perm[i]);
    p.d(i) = dm.d(perm[i]);
    p.x.row(i) = dm.x.row(perm[i]);
    p.cluster_ids[i] = dm.cluster_ids[perm[i]];
    pp.assignment[i] = plan.assignment[perm[i]];
  }
  EXPECT_NEAR(estimate(p, cfg, Estimand::PLR, pp).theta, base, 1e-10);

  // Relabeling folds changes nothing either.
  FoldPlan relabeled = plan;
  for (int& a : relabeled.assignment) a = 3 - a;
  EXPECT_NEAR(estimate(dm, cfg, Estimand::PLR, relabeled).theta, base, 1e-10);
}

TEST(Dml, RepeatsAggregate) {
  const DesignMatrix dm = simulated(500, 10);
  DmlConfig cfg = linear_config(false);
  cfg.n_repeats = 3;
  const EffectEstimate e = dml_plr(dm, cfg);
  ASSERT_EQ(e.repeat_theta.size(), 3u);
  const double mean = (e.repeat_theta[0] + e.repeat_theta[1] + e.repeat_theta[2]) / 3;
  EXPECT_NEAR(e.theta, mean, 1e-12);
  std::vector<double> v;
  for (int r = 0; r < 3; ++r)
    v.push_back(e.repeat_se[r] * e.repeat_se[r] + (e.repeat_theta[r] - mean) * (e.repeat_theta[r] - mean));
  std::sort(v.begin(), v.end());
  EXPECT_NEAR(e.se, std::sqrt(v[1]), 1e-12);
  EXPECT_EQ(dml_plr(dm, cfg).theta, e.theta);
}

// ---------------------------------------------------------------------------
// Failure modes

TEST(Dml, DegenerateResidualsWhenTreatmentIsACovariate) {
  DesignMatrix dm = random_design(200, 11);
  Matrix x(dm.rows(), dm.x.cols() + 1);
  x << dm.x, dm.d;
  dm.x = x;
  dm.column_names.push_back("mita_copy");
  DmlConfig cfg = linear_config(false);
  cfg.no_split = true;
  EXPECT_EQ(error_kind([&] { dml_plr(dm, cfg); }), "DegenerateResiduals");
}

TEST(Dml, OverlapFailureWhenMostPropensitiesClip) {
  const DesignMatrix dm = simulated(500, 12);
  DmlConfig cfg = linear_config(true);
  cfg.propensity_clip = 0.49;
  EXPECT_EQ(error_kind([&] { dml_irm_ate(dm, cfg); }), "OverlapFailure");
}

TEST(Dml, ClippingCountIsMonotone) {
  const DesignMatrix dm = simulated(500, 13, -0.3, 2.5);
  Index prev = -1;
  for (double clip : {0.001, 0.01, 0.05, 0.1}) {
    DmlConfig cfg = linear_config(true);
    cfg.propensity_clip = clip;
    const FoldPlan plan = make_folds(dm.rows(), 5, 3);
    const Nuisances nu = crossfit_nuisances(dm, cfg, Estimand::IrmAte, plan);
    EXPECT_GE(nu.clipped, prev);
    EXPECT_GE(nu.propensity.minCoeff(), clip);
    EXPECT_LE(nu.propensity.maxCoeff(), 1 - clip);
    prev = nu.clipped;
  }
}

TEST(Dml, ConstantTreatmentAndConfig) {
  DesignMatrix dm = random_design(100, 14);
  dm.d.setOnes();
  EXPECT_EQ(error_kind([&] { dml_plr(dm, linear_config(false)); }), "ConstantTreatment");
  dm = random_design(100, 14);
  DmlConfig cfg = linear_config(false);
  EXPECT_EQ(error_kind([&] { dml_irm_ate(dm, cfg); }), "ConfigError");
  cfg.k_folds = 101;
  EXPECT_EQ(error_kind([&] { dml_plr(dm, cfg); }), "BadFoldCount");
}

// ---------------------------------------------------------------------------
// Statistical behavior on simulated data

TEST(DmlSim, RandomizedTreatmentAgreesWithDifferenceInMeans) {
  const DesignMatrix dm = simulated(3000, 15, -0.3, 0.0);
  const EffectEstimate plr = dml_plr(dm, linear_config(false));
  const EffectEstimate dim = diff_in_means(dm.y, dm.d);
  EXPECT_LT(std::abs(plr.theta - dim.theta), 3 * dim.se);
  EXPECT_LT(plr.se, dim.se);
}

TEST(DmlSim, ZeroEffectCovered) {
  const DesignMatrix dm = simulated(3000, 16, 0.0);
  for (auto est : {Estimand::PLR, Estimand::IrmAte, Estimand::IrmAtte}) {
    const EffectEstimate e = estimate(dm, linear_config(est != Estimand::PLR), est);
    EXPECT_LT(std::abs(e.theta), 3 * e.se) << estimand_name(est);
  }
}

TEST(DmlSim, ConstantEffectAteMatchesAtte) {
  const DesignMatrix dm = simulated(4000, 17);
  const EffectEstimate ate = dml_irm_ate(dm, linear_config(true));
  const EffectEstimate att = dml_irm_atte(dm, linear_config(true));
  EXPECT_LT(std::abs(ate.theta - att.theta), 0.1);
  EXPECT_LT(std::abs(ate.theta + 0.3), 3 * ate.se);
  EXPECT_LT(std::abs(att.theta + 0.3), 3 * att.se);
}

TEST(Probe, OrthogonalScoreIsFlatterThanPlugIn) {
  const DesignMatrix dm = simulated(2000, 18);
  const std::vector<double> deltas = {0.2, 0.1, 0.05, 0.025};
  for (auto est : {Estimand::PLR, Estimand::IrmAte}) {
    const ProbeReport r = orthogonality_probe(dm, linear_config(est != Estimand::PLR), est, deltas);
    EXPECT_EQ(r.rows.size(), 8u);
    ASSERT_EQ(r.slopes.size(), 2u);
    for (const auto& [dir, slope] : r.slopes) EXPECT_GT(slope, 0.8) << dir;
    EXPECT_GT(r.max_plugin_sensitivity(0.025), 10 * r.max_sensitivity(0.025));
    const auto j = to_json(r);
    EXPECT_EQ(j.at("rows").size(), 8u);
  }
  EXPECT_EQ(error_kind([&] { orthogonality_probe(dm, linear_config(false), Estimand::PLR, {0.0}); }),
            "ConfigError");
}

// ---------------------------------------------------------------------------
// Serialization

TEST(DmlConfigJson, RoundTrip) {
  DmlConfig c = linear_config(true);
  c.k_folds = 3;
  c.n_repeats = 2;
  c.propensity_clip = 0.05;
  c.cluster_variance = true;
  c.seed = 99;
  const DmlConfig back = dml_config_from_json(to_json(c));
  EXPECT_EQ(back.k_folds, 3);
  EXPECT_EQ(back.n_repeats, 2);
  EXPECT_EQ(back.propensity_clip, 0.05);
  EXPECT_TRUE(back.cluster_variance);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.treatment_learner.kind, LearnerKind::Logistic);
  EXPECT_EQ(to_json(back), to_json(c));
  for (auto e : {Estimand::PLR, Estimand::IrmAte, Estimand::IrmAtte}) EXPECT_EQ(parse_estimand(estimand_name(e)), e);
  EXPECT_EQ(error_kind([] { parse_estimand("late"); }), "ConfigError");
  EXPECT_EQ(error_kind([] { dml_config_from_json({{"k_folds", 1}}); }), "ConfigError");
  EXPECT_EQ(error_kind([] { dml_config_from_json({{"propensity_clip", 0.5}}); }), "ConfigError");
}

TEST(EffectEstimateJson, PsiOptional) {
  const DesignMatrix dm = simulated(300, 19);
  const EffectEstimate e = dml_plr(dm, linear_config(false));
  EXPECT_FALSE(to_json(e).contains("psi"));
  EXPECT_EQ(to_json(e, true).at("psi").size(), 300u);
  EXPECT_EQ(to_json(e).at("estimand"), "plr");
}
