#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/data.hpp"
#include "odml/design.hpp"
#include "odml/dml.hpp"

namespace odml {

enum class GForm { Linear, Nonlinear, Step };

std::string_view g_form_name(GForm g);  // "linear", "nonlinear", "step"
GForm parse_g_form(std::string_view s);

/// Treatment effect tau(X) = base + interaction * z_dpot, where z_dpot is
/// distance to Potosi standardized by its calibration target. interaction = 0
/// is the constant-effect mode.
struct EffectSpec {
  double base = -0.3;
  double interaction = 0.0;
  bool heterogeneous() const { return interaction != 0.0; }
};

struct DgpConfig {
  Index n = 2000;
  EffectSpec effect;
  GForm g_form = GForm::Linear;
  double selection_strength = 1.0;
  double noise_sd = 0.9;
  double target_treated_share = 0.75;
  // Latent correlation between dist_potosi and dist_boundary.
  double copula_correlation = 0.4;
  // Latin-hypercube draws of the latent normals (per column, independently
  // permuted); iid draws when false.
  bool stratified = true;
  Index households_per_district = 20;
  std::uint64_t seed = 20241206;
};

nlohmann::json to_json(const DgpConfig& cfg);
/// "true_theta" accepts a number (constant effect) or {"base", "interaction"}.
DgpConfig dgp_config_from_json(const nlohmann::json& j);
void validate(const DgpConfig& cfg);

/// Population quantities of the configured law.
struct GroundTruth {
  double ate = 0;
  double atte = 0;
  // Probability limit of the partialling-out estimator: the effect averaged
  // with weights m(X)(1 - m(X)).
  double plr_weighted_effect = 0;
  double intercept_a0 = 0;
  double treated_share = 0;
};

nlohmann::json to_json(const GroundTruth& t);

struct Simulation {
  Dataset data;
  GroundTruth truth;
};

/// Calibration targets: mean and sd of each simulated covariate.
struct MarginalTarget {
  Column column;
  double mean;
  double sd;
};
const std::vector<MarginalTarget>& calibration_targets();
inline constexpr double kTargetSeg1 = 0.085927;
inline constexpr double kTargetSeg2 = 0.288904;
inline constexpr double kTargetSeg3 = 0.384303;
inline constexpr double kTargetOutcomeMean = 5.877284;
inline constexpr double kTargetTreatedShare = 0.752368;

Simulation simulate(const DgpConfig& cfg);
GroundTruth ground_truth(const DgpConfig& cfg);

/// Mean and sd of a normal truncated to (lower, inf).
std::pair<double, double> truncated_normal_moments(double mu, double sigma, double lower);
/// Mean and sd of round(N(mu, sigma^2) truncated to (lower - 1/2, inf)).
std::pair<double, double> rounded_count_moments(double mu, double sigma, int lower);
/// (mu, sigma) whose truncated/rounded law has the requested moments.
std::pair<double, double> solve_truncated_normal(double mean, double sd, double lower);
std::pair<double, double> solve_rounded_count(double mean, double sd, int lower);

enum class EstimatorKind { PLR, IrmAte, IrmAtte, DiffMeans };
std::string_view estimator_name(EstimatorKind k);  // "plr", "irm-ate", "irm-atte", "diff-means"
EstimatorKind parse_estimator(std::string_view s);

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::PLR;
  DmlConfig dml;
  DesignSpec design;
};

/// Design used on synthetic data: distance-to-Potosi cubic, all controls plus
/// the remaining running variables, no band restriction.
DesignSpec simulation_design();
nlohmann::json to_json(const EstimatorSpec& e);
EstimatorSpec estimator_spec_from_json(const nlohmann::json& j);

struct RepResult {
  Index rep = 0;
  bool ok = false;
  double theta = 0;
  double se = 0;
  std::string error;
};

struct McReport {
  std::string estimator;
  Index reps = 0;
  Index failures = 0;
  double truth = 0;
  double mean_theta = 0;
  double mean_bias = 0;
  double rmse = 0;
  double coverage95 = 0;
  double mean_se = 0;
  double sd_theta = 0;
  // Monte Carlo standard error of mean_theta.
  double mc_se = 0;
  GroundTruth ground_truth;
  std::vector<RepResult> per_rep;
};

nlohmann::json to_json(const McReport& r);
std::string format_mc_tsv(const McReport& r);

/// Fraction of failed reps above which a run is refused.
inline constexpr double kMaxRepFailureRate = 0.05;

/// Rep r simulates with seed derive_seed(cfg.seed, r); results do not depend
/// on the worker count.
McReport monte_carlo(const DgpConfig& cfg, const EstimatorSpec& est, Index reps, int threads = 0);

/// Difference in treated and control means with the unpooled standard error.
EffectEstimate diff_in_means(const Vector& y, const Vector& d);

}  // namespace odml
