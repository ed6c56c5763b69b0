#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/design.hpp"
#include "odml/learners.hpp"
#include "odml/numeric.hpp"

namespace odml {

/// Cross-fitting partition: assignment[i] is the held-out fold of row i.
struct FoldPlan {
  Index n = 0;
  int k_folds = 0;
  std::vector<int> assignment;
  std::uint64_t seed = 0;

  std::vector<Index> test_rows(int fold) const;
  std::vector<Index> train_rows(int fold) const;
};

/// Seeded shuffle of 0..n-1 dealt round-robin into k folds.
FoldPlan make_folds(Index n, int k, std::uint64_t seed);

enum class Estimand { PLR, IrmAte, IrmAtte };

std::string_view estimand_name(Estimand e);  // "plr", "irm-ate", "irm-atte"
Estimand parse_estimand(std::string_view s);

struct DmlConfig {
  int k_folds = 5;
  int n_repeats = 1;
  // Diagnostic mode: nuisances are fit and evaluated on the full sample.
  bool no_split = false;
  LearnerSpec outcome_learner = default_mlp_regressor();
  LearnerSpec treatment_learner = default_mlp_classifier();
  double propensity_clip = 0.01;
  std::uint64_t seed = 20241206;
  // Aggregate scores by cluster before squaring in the variance.
  bool cluster_variance = false;
  // Worker threads for fold-level fits; 0 picks the hardware count.
  int threads = 0;
};

nlohmann::json to_json(const DmlConfig& cfg);
DmlConfig dml_config_from_json(const nlohmann::json& j);

/// Share of clipped propensities above which IRM estimates are refused.
inline constexpr double kMaxClippedShare = 0.25;
/// Fold redraws tried before FoldImbalance is reported.
inline constexpr int kMaxFoldRedraws = 10;

struct FoldDiagnostics {
  int fold = 0;
  Index n_train = 0;
  Index n_test = 0;
  double outcome_loss = 0;    // held-out MSE of the outcome nuisance(s)
  double treatment_loss = 0;  // held-out log loss (classifier) or MSE
  Index clipped = 0;          // propensities moved onto the clip bounds
};

struct EffectEstimate {
  Estimand estimand = Estimand::PLR;
  double theta = 0;
  double se = 0;
  std::array<double, 2> ci95{};
  double jacobian = 0;
  Vector psi;
  Index n = 0;
  std::vector<FoldDiagnostics> fold_diagnostics;
  Index clipped_total = 0;
  bool degenerate_se = false;
  std::vector<double> repeat_theta;
  std::vector<double> repeat_se;
};

nlohmann::json to_json(const EffectEstimate& est, bool include_psi = false);

/// Cross-fitted nuisance predictions, one entry per row. PLR fills
/// outcome_mean (E[Y|X]) and propensity; IRM fills g0, g1 (ATE only) and the
/// clipped propensity.
struct Nuisances {
  Vector outcome_mean;
  Vector g0;
  Vector g1;
  Vector propensity;
  std::vector<FoldDiagnostics> folds;
  Index clipped = 0;
};

/// Orthogonal scores are affine in theta: psi_i = a_i * theta + b_i.
struct LinearScore {
  Vector a;
  Vector b;
};

/// Partialling-out score: a = -(D - m)^2, b = (Y - l)(D - m).
template <typename DerivedY, typename DerivedD, typename DerivedL, typename DerivedM>
LinearScore plr_score(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedD>& d,
                      const Eigen::MatrixBase<DerivedL>& ell, const Eigen::MatrixBase<DerivedM>& m) {
  const Vector d_res = d - m;
  return {-d_res.array().square().matrix(), ((y - ell).array() * d_res.array()).matrix()};
}

/// Augmented inverse-propensity score for the ATE: a = -1,
/// b = g1 - g0 + D(Y - g1)/m - (1 - D)(Y - g0)/(1 - m).
template <typename DerivedY, typename DerivedD, typename DerivedG0, typename DerivedG1,
          typename DerivedM>
LinearScore irm_ate_score(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedD>& d,
                          const Eigen::MatrixBase<DerivedG0>& g0,
                          const Eigen::MatrixBase<DerivedG1>& g1,
                          const Eigen::MatrixBase<DerivedM>& m) {
  const auto ya = y.array();
  const auto da = d.array();
  const auto ma = m.array();
  Vector b = (g1.array() - g0.array() + da * (ya - g1.array()) / ma -
              (1.0 - da) * (ya - g0.array()) / (1.0 - ma))
                 .matrix();
  return {Vector::Constant(y.size(), -1.0), std::move(b)};
}

/// Score for the effect on the treated, normalized by treated_share:
/// a = -D/p, b = [D(Y - g0) - m(1 - D)(Y - g0)/(1 - m)]/p.
template <typename DerivedY, typename DerivedD, typename DerivedG0, typename DerivedM>
LinearScore irm_atte_score(const Eigen::MatrixBase<DerivedY>& y,
                           const Eigen::MatrixBase<DerivedD>& d,
                           const Eigen::MatrixBase<DerivedG0>& g0,
                           const Eigen::MatrixBase<DerivedM>& m, double treated_share) {
  const auto ya = y.array();
  const auto da = d.array();
  const auto ma = m.array();
  const auto resid = ya - g0.array();
  Vector b = ((da * resid - ma * (1.0 - da) * resid / (1.0 - ma)) / treated_share).matrix();
  return {(-da / treated_share).matrix(), std::move(b)};
}

/// se = sqrt(mean(psi^2) / jacobian^2 / n).
double score_variance(const Vector& psi, double jacobian);

/// Cluster-aggregated variant: sums scores within clusters before squaring.
double cluster_score_variance(const Vector& psi, double jacobian,
                              const std::vector<std::string>& cluster_ids);

Nuisances crossfit_nuisances(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                             const FoldPlan& plan);

/// Solves mean(psi) = 0 for the estimand's score on fitted nuisances.
EffectEstimate solve_score(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                           const Nuisances& nuisances);

/// Full estimator with its own fold draws (and repeats).
EffectEstimate estimate(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand);
/// Single cross-fitting pass over a caller-supplied fold plan.
EffectEstimate estimate(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                        const FoldPlan& plan);

inline EffectEstimate dml_plr(const DesignMatrix& dm, const DmlConfig& cfg) {
  return estimate(dm, cfg, Estimand::PLR);
}
inline EffectEstimate dml_irm_ate(const DesignMatrix& dm, const DmlConfig& cfg) {
  return estimate(dm, cfg, Estimand::IrmAte);
}
inline EffectEstimate dml_irm_atte(const DesignMatrix& dm, const DmlConfig& cfg) {
  return estimate(dm, cfg, Estimand::IrmAtte);
}

struct ProbeRow {
  std::string direction;  // "shift" or "tilt"
  double delta = 0;
  // |mean psi(perturbed) - mean psi| / delta with (Y, D) averaged out under
  // the law implied by the fitted nuisances.
  double sensitivity = 0;
  // Same ratio on the realized sample; carries an O(n^-1/2) noise floor.
  double empirical_sensitivity = 0;
  // Naive plug-in score (Y - theta D - g(X)) D under the same perturbation.
  double plugin_sensitivity = 0;
  double plugin_empirical_sensitivity = 0;
};

struct ProbeReport {
  Estimand estimand = Estimand::PLR;
  double theta = 0;
  std::vector<ProbeRow> rows;
  // Least-squares slope of log sensitivity on log delta per direction.
  std::vector<std::pair<std::string, double>> slopes;

  /// Largest sensitivity over directions at a given delta.
  double max_sensitivity(double delta) const;
  double max_plugin_sensitivity(double delta) const;
};

nlohmann::json to_json(const ProbeReport& report);

/// Perturbs every fitted nuisance by delta along fixed directions (constant
/// shift; tilt along the first standardized covariate) and records the
/// first-order response of the mean score at the unperturbed theta.
ProbeReport orthogonality_probe(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                                const std::vector<double>& deltas);

}  // namespace odml
