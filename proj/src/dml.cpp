#include "odml/dml.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "odml/error.hpp"
#include "odml/ols.hpp"

namespace odml {

std::vector<Index> FoldPlan::test_rows(int fold) const {
  std::vector<Index> rows;
  for (Index i = 0; i < n; ++i)
    if (assignment[static_cast<std::size_t>(i)] == fold) rows.push_back(i);
  return rows;
}

std::vector<Index> FoldPlan::train_rows(int fold) const {
  std::vector<Index> rows;
  for (Index i = 0; i < n; ++i)
    if (assignment[static_cast<std::size_t>(i)] != fold) rows.push_back(i);
  return rows;
}

FoldPlan make_folds(Index n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<Index>(k) > n)
    throw Error(errc::kBadFoldCount, fmt::format("cannot split {} rows into {} folds", n, k));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(seed, "folds"));
  shuffle_in_place(order, rng);
  FoldPlan plan;
  plan.n = n;
  plan.k_folds = k;
  plan.seed = seed;
  plan.assignment.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    plan.assignment[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(k));
  return plan;
}

std::string_view estimand_name(Estimand e) {
  switch (e) {
    case Estimand::PLR: return "plr";
    case Estimand::IrmAte: return "irm-ate";
    case Estimand::IrmAtte: return "irm-atte";
  }
  return "?";
}

Estimand parse_estimand(std::string_view s) {
  if (s == "plr") return Estimand::PLR;
  if (s == "irm-ate") return Estimand::IrmAte;
  if (s == "irm-atte") return Estimand::IrmAtte;
  throw Error(errc::kConfigError, fmt::format("unknown model '{}' (plr, irm-ate, irm-atte)", s));
}

nlohmann::json to_json(const DmlConfig& c) {
  return {{"k_folds", c.k_folds},
          {"n_repeats", c.n_repeats},
          {"no_split", c.no_split},
          {"outcome_learner", to_json(c.outcome_learner)},
          {"treatment_learner", to_json(c.treatment_learner)},
          {"propensity_clip", c.propensity_clip},
          {"seed", c.seed},
          {"cluster_variance", c.cluster_variance}};
}

DmlConfig dml_config_from_json(const nlohmann::json& j) {
  DmlConfig c;
  try {
    c.k_folds = j.value("k_folds", c.k_folds);
    c.n_repeats = j.value("n_repeats", c.n_repeats);
    c.no_split = j.value("no_split", c.no_split);
    if (j.contains("outcome_learner"))
      c.outcome_learner = learner_spec_from_json(j.at("outcome_learner"));
    if (j.contains("treatment_learner"))
      c.treatment_learner = learner_spec_from_json(j.at("treatment_learner"));
    c.propensity_clip = j.value("propensity_clip", c.propensity_clip);
    c.seed = j.value("seed", c.seed);
    c.cluster_variance = j.value("cluster_variance", c.cluster_variance);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("dml config: {}", e.what()));
  }
  if (c.k_folds < 2) throw Error(errc::kConfigError, "k_folds must be >= 2");
  if (c.n_repeats < 1) throw Error(errc::kConfigError, "n_repeats must be >= 1");
  if (!(c.propensity_clip > 0 && c.propensity_clip < 0.5))
    throw Error(errc::kConfigError, "propensity_clip must lie in (0, 0.5)");
  return c;
}

nlohmann::json to_json(const EffectEstimate& e, bool include_psi) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : e.fold_diagnostics)
    folds.push_back({{"fold", f.fold},
                     {"n_train", f.n_train},
                     {"n_test", f.n_test},
                     {"outcome_loss", f.outcome_loss},
                     {"treatment_loss", f.treatment_loss},
                     {"clipped", f.clipped}});
  nlohmann::json j = {{"estimand", estimand_name(e.estimand)},
                      {"theta", e.theta},
                      {"se", e.se},
                      {"ci95", {e.ci95[0], e.ci95[1]}},
                      {"jacobian", e.jacobian},
                      {"n", e.n},
                      {"clipped_total", e.clipped_total},
                      {"degenerate_se", e.degenerate_se},
                      {"repeat_theta", e.repeat_theta},
                      {"repeat_se", e.repeat_se},
                      {"fold_diagnostics", folds}};
  if (include_psi) j["psi"] = std::vector<double>(e.psi.data(), e.psi.data() + e.psi.size());
  return j;
}

double score_variance(const Vector& psi, double jacobian) {
  if (psi.size() < 2) throw Error(errc::kNotEnoughRows, "score variance needs at least two scores");
  if (jacobian == 0.0) throw Error(errc::kZeroJacobian, "score Jacobian is zero");
  const double n = static_cast<double>(psi.size());
  const double mean_sq = pairwise_sum(psi.array().square()) / n;
  return std::sqrt(mean_sq / (jacobian * jacobian) / n);
}

double cluster_score_variance(const Vector& psi, double jacobian,
                              const std::vector<std::string>& cluster_ids) {
  if (psi.size() < 2) throw Error(errc::kNotEnoughRows, "score variance needs at least two scores");
  if (jacobian == 0.0) throw Error(errc::kZeroJacobian, "score Jacobian is zero");
  if (static_cast<Index>(cluster_ids.size()) != psi.size())
    throw Error(errc::kDimensionMismatch, "cluster ids and scores differ in length");
  Index g = 0;
  const auto groups = cluster_index(cluster_ids, &g);
  Vector sums = Vector::Zero(g);
  for (Index i = 0; i < psi.size(); ++i) sums(groups[static_cast<std::size_t>(i)]) += psi(i);
  const double n = static_cast<double>(psi.size());
  return std::sqrt(pairwise_sum(sums.array().square()) / (n * n) / (jacobian * jacobian));
}

namespace {

bool is_classifier_like(const LearnerSpec& s) {
  return s.is_classifier() || s.kind == LearnerKind::Mean;
}

LearnerSpec reseeded(LearnerSpec s, std::string_view role, int fold, std::uint64_t plan_seed) {
  s.seed = derive_seed(derive_seed(s.seed, role), derive_seed(plan_seed, static_cast<std::uint64_t>(fold)));
  return s;
}

double mse(const Vector& pred, const Vector& truth) {
  if (pred.size() == 0) return 0.0;
  return pairwise_mean((pred - truth).array().square());
}

double log_loss(const Vector& p, const Vector& d) {
  if (p.size() == 0) return 0.0;
  Vector l(p.size());
  for (Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p(i), 1e-15, 1.0 - 1e-15);
    l(i) = -(d(i) * std::log(q) + (1.0 - d(i)) * std::log(1.0 - q));
  }
  return pairwise_mean(l);
}

bool both_states(const Vector& d, const std::vector<Index>& rows) {
  bool has0 = false, has1 = false;
  for (Index i : rows) (d(i) == 1.0 ? has1 : has0) = true;
  return has0 && has1;
}

bool plan_balanced(const DesignMatrix& dm, const FoldPlan& plan) {
  for (int f = 0; f < plan.k_folds; ++f)
    if (!both_states(dm.d, plan.train_rows(f))) return false;
  return true;
}

struct FoldResult {
  std::vector<Index> test;
  Vector outcome_mean, g0, g1, propensity;
  FoldDiagnostics diag;
};

FoldResult fit_fold(const DesignMatrix& dm, const Matrix& cov, const DmlConfig& cfg,
                    Estimand estimand, bool need_g1, const std::vector<Index>& train,
                    const std::vector<Index>& test, int fold, std::uint64_t plan_seed) {
  FoldResult r;
  r.test = test;
  r.diag.fold = fold;
  r.diag.n_train = static_cast<Index>(train.size());
  r.diag.n_test = static_cast<Index>(test.size());
  const Matrix x_train = cov(train, Eigen::all);
  const Matrix x_test = cov(test, Eigen::all);
  const Vector y_train = dm.y(train);
  const Vector d_train = dm.d(train);
  const Vector y_test = dm.y(test);
  const Vector d_test = dm.d(test);

  const LearnerSpec treat = reseeded(cfg.treatment_learner, "treatment", fold, plan_seed);
  const TrainedModel m_model = fit(treat, x_train, d_train);
  Vector m_hat = predict(m_model, x_test);
  r.diag.treatment_loss =
      is_classifier_like(treat) ? log_loss(m_hat, d_test) : mse(m_hat, d_test);

  if (estimand == Estimand::PLR) {
    const LearnerSpec out = reseeded(cfg.outcome_learner, "outcome", fold, plan_seed);
    r.outcome_mean = predict(fit(out, x_train, y_train), x_test);
    r.diag.outcome_loss = mse(r.outcome_mean, y_test);
    r.propensity = std::move(m_hat);
    return r;
  }

  std::vector<Index> treated, control;
  for (std::size_t k = 0; k < train.size(); ++k) (d_train(static_cast<Index>(k)) == 1.0 ? treated : control).push_back(static_cast<Index>(k));
  const LearnerSpec out0 = reseeded(cfg.outcome_learner, "outcome0", fold, plan_seed);
  r.g0 = predict(fit(out0, x_train(control, Eigen::all), y_train(control)), x_test);
  Vector sq = Vector::Zero(static_cast<Index>(test.size()));
  if (need_g1 || estimand == Estimand::IrmAte) {
    const LearnerSpec out1 = reseeded(cfg.outcome_learner, "outcome1", fold, plan_seed);
    r.g1 = predict(fit(out1, x_train(treated, Eigen::all), y_train(treated)), x_test);
    for (Index i = 0; i < sq.size(); ++i) {
      const double pred = d_test(i) == 1.0 ? r.g1(i) : r.g0(i);
      sq(i) = (pred - y_test(i)) * (pred - y_test(i));
    }
    r.diag.outcome_loss = pairwise_mean(sq);
  } else {
    std::vector<Index> control_test;
    for (Index i = 0; i < d_test.size(); ++i)
      if (d_test(i) == 0.0) control_test.push_back(i);
    r.diag.outcome_loss = mse(r.g0(control_test), y_test(control_test));
  }

  const double lo = cfg.propensity_clip, hi = 1.0 - cfg.propensity_clip;
  for (Index i = 0; i < m_hat.size(); ++i) {
    if (m_hat(i) < lo || m_hat(i) > hi) {
      m_hat(i) = std::clamp(m_hat(i), lo, hi);
      ++r.diag.clipped;
    }
  }
  r.propensity = std::move(m_hat);
  return r;
}

Nuisances crossfit_impl(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                        const FoldPlan* plan, bool need_g1) {
  const Index n = dm.rows();
  if (estimand != Estimand::PLR && !is_classifier_like(cfg.treatment_learner))
    throw Error(errc::kConfigError, "IRM needs a classifier treatment learner");
  const Matrix cov = dm.covariates();

  struct Task {
    std::vector<Index> train, test;
    int fold;
  };
  std::vector<Task> tasks;
  std::uint64_t plan_seed = cfg.seed;
  if (plan == nullptr) {
    std::vector<Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    if (!both_states(dm.d, all))
      throw Error(errc::kFoldImbalance, "sample lacks one of the treatment states");
    tasks.push_back({all, all, 0});
  } else {
    if (plan->n != n) throw Error(errc::kDimensionMismatch, "fold plan does not match design rows");
    plan_seed = plan->seed;
    for (int f = 0; f < plan->k_folds; ++f) {
      Task t{plan->train_rows(f), plan->test_rows(f), f};
      if (!both_states(dm.d, t.train))
        throw Error(errc::kFoldImbalance, fmt::format("training complement of fold {} has one treatment state", f));
      tasks.push_back(std::move(t));
    }
  }

  std::vector<FoldResult> results(tasks.size());
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : hw;
  if (workers <= 1 || tasks.size() == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t)
      results[t] = fit_fold(dm, cov, cfg, estimand, need_g1, tasks[t].train, tasks[t].test,
                            tasks[t].fold, plan_seed);
  } else {
    std::vector<std::future<FoldResult>> pending;
    for (const auto& t : tasks)
      pending.push_back(std::async(std::launch::async, [&, t] {
        return fit_fold(dm, cov, cfg, estimand, need_g1, t.train, t.test, t.fold, plan_seed);
      }));
    for (std::size_t t = 0; t < tasks.size(); ++t) results[t] = pending[t].get();
  }

  Nuisances nu;
  const bool irm = estimand != Estimand::PLR;
  const bool with_g1 = irm && (need_g1 || estimand == Estimand::IrmAte);
  nu.propensity = Vector::Zero(n);
  if (!irm) nu.outcome_mean = Vector::Zero(n);
  if (irm) nu.g0 = Vector::Zero(n);
  if (with_g1) nu.g1 = Vector::Zero(n);
  for (auto& r : results) {
    for (std::size_t k = 0; k < r.test.size(); ++k) {
      const Index i = r.test[k];
      const Index kk = static_cast<Index>(k);
      nu.propensity(i) = r.propensity(kk);
      if (!irm) nu.outcome_mean(i) = r.outcome_mean(kk);
      if (irm) nu.g0(i) = r.g0(kk);
      if (with_g1) nu.g1(i) = r.g1(kk);
    }
    nu.clipped += r.diag.clipped;
    nu.folds.push_back(r.diag);
  }
  return nu;
}

LinearScore score_of(const DesignMatrix& dm, Estimand estimand, const Nuisances& nu) {
  switch (estimand) {
    case Estimand::PLR: return plr_score(dm.y, dm.d, nu.outcome_mean, nu.propensity);
    case Estimand::IrmAte: return irm_ate_score(dm.y, dm.d, nu.g0, nu.g1, nu.propensity);
    case Estimand::IrmAtte:
      return irm_atte_score(dm.y, dm.d, nu.g0, nu.propensity, pairwise_mean(dm.d));
  }
  return {};
}

}  // namespace

Nuisances crossfit_nuisances(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                             const FoldPlan& plan) {
  return crossfit_impl(dm, cfg, estimand, cfg.no_split ? nullptr : &plan, false);
}

EffectEstimate solve_score(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                           const Nuisances& nu) {
  const Index n = dm.rows();
  if (estimand != Estimand::PLR &&
      static_cast<double>(nu.clipped) > kMaxClippedShare * static_cast<double>(n))
    throw Error(errc::kOverlapFailure,
                fmt::format("{} of {} propensities clipped at {}", nu.clipped, n, cfg.propensity_clip));

  const LinearScore s = score_of(dm, estimand, nu);
  const double sum_a = pairwise_sum(s.a);
  if (estimand == Estimand::PLR && -sum_a < 1e-10)
    throw Error(errc::kDegenerateResiduals,
                fmt::format("sum of squared treatment residuals is {:.3g}", -sum_a));

  EffectEstimate e;
  e.estimand = estimand;
  e.n = n;
  e.theta = -pairwise_sum(s.b) / sum_a;
  e.psi = s.a * e.theta + s.b;
  e.jacobian = sum_a / static_cast<double>(n);
  e.se = cfg.cluster_variance ? cluster_score_variance(e.psi, e.jacobian, dm.cluster_ids)
                              : score_variance(e.psi, e.jacobian);
  e.degenerate_se = !(e.se > 0);
  e.ci95 = {e.theta - 1.96 * e.se, e.theta + 1.96 * e.se};
  e.fold_diagnostics = nu.folds;
  e.clipped_total = nu.clipped;
  e.repeat_theta = {e.theta};
  e.repeat_se = {e.se};
  return e;
}

EffectEstimate estimate(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                        const FoldPlan& plan) {
  return solve_score(dm, cfg, estimand, crossfit_impl(dm, cfg, estimand, &plan, false));
}

namespace {

FoldPlan draw_balanced_plan(const DesignMatrix& dm, const DmlConfig& cfg, int repeat) {
  const std::uint64_t base = derive_seed(cfg.seed, static_cast<std::uint64_t>(repeat));
  for (int attempt = 0; attempt < kMaxFoldRedraws; ++attempt) {
    FoldPlan plan = make_folds(dm.rows(), cfg.k_folds, derive_seed(base, static_cast<std::uint64_t>(attempt)));
    if (plan_balanced(dm, plan)) return plan;
  }
  throw Error(errc::kFoldImbalance,
              fmt::format("no balanced {}-fold plan after {} draws", cfg.k_folds, kMaxFoldRedraws));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

EffectEstimate estimate(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand) {
  if (dm.d.minCoeff() == dm.d.maxCoeff())
    throw Error(errc::kConstantTreatment, "treatment is constant");
  if (cfg.no_split)
    return solve_score(dm, cfg, estimand, crossfit_impl(dm, cfg, estimand, nullptr, false));

  std::vector<EffectEstimate> reps;
  for (int r = 0; r < cfg.n_repeats; ++r) reps.push_back(estimate(dm, cfg, estimand, draw_balanced_plan(dm, cfg, r)));
  if (reps.size() == 1) return reps.front();

  EffectEstimate out = reps.front();
  const double count = static_cast<double>(reps.size());
  Vector thetas(static_cast<Index>(reps.size()));
  for (std::size_t r = 0; r < reps.size(); ++r) thetas(static_cast<Index>(r)) = reps[r].theta;
  out.theta = pairwise_mean(thetas);
  std::vector<double> spread;
  out.psi.setZero();
  out.jacobian = 0;
  out.repeat_theta.clear();
  out.repeat_se.clear();
  out.fold_diagnostics.clear();
  out.clipped_total = 0;
  for (const auto& r : reps) {
    spread.push_back(r.se * r.se + (r.theta - out.theta) * (r.theta - out.theta));
    out.psi += r.psi / count;
    out.jacobian += r.jacobian / count;
    out.repeat_theta.push_back(r.theta);
    out.repeat_se.push_back(r.se);
    out.fold_diagnostics.insert(out.fold_diagnostics.end(), r.fold_diagnostics.begin(),
                                r.fold_diagnostics.end());
    out.clipped_total += r.clipped_total;
  }
  out.se = std::sqrt(median(spread));
  out.degenerate_se = !(out.se > 0);
  out.ci95 = {out.theta - 1.96 * out.se, out.theta + 1.96 * out.se};
  return out;
}

// --------------------------------------------------------------------------
// Orthogonality probe

double ProbeReport::max_sensitivity(double delta) const {
  double best = 0;
  for (const auto& r : rows)
    if (r.delta == delta) best = std::max(best, r.sensitivity);
  return best;
}

double ProbeReport::max_plugin_sensitivity(double delta) const {
  double best = 0;
  for (const auto& r : rows)
    if (r.delta == delta) best = std::max(best, r.plugin_sensitivity);
  return best;
}

nlohmann::json to_json(const ProbeReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"direction", r.direction},
                    {"delta", r.delta},
                    {"sensitivity", r.sensitivity},
                    {"empirical_sensitivity", r.empirical_sensitivity},
                    {"plugin_sensitivity", r.plugin_sensitivity},
                    {"plugin_empirical_sensitivity", r.plugin_empirical_sensitivity}});
  nlohmann::json slopes = nlohmann::json::object();
  for (const auto& [dir, slope] : report.slopes) slopes[dir] = slope;
  return {{"estimand", estimand_name(report.estimand)},
          {"theta", report.theta},
          {"rows", rows},
          {"slopes", slopes}};
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Nuisances evaluated at eta + delta * h.
Nuisances perturbed(const Nuisances& base, Estimand estimand, const Vector& h, double delta) {
  Nuisances out = base;
  if (estimand == Estimand::PLR) {
    out.outcome_mean = base.outcome_mean + delta * h;
    out.propensity = base.propensity + delta * h;
    return out;
  }
  out.g0 = base.g0 + delta * h;
  if (base.g1.size()) out.g1 = base.g1 + delta * h;
  for (Index i = 0; i < h.size(); ++i)
    out.propensity(i) = sigmoid(logit(base.propensity(i)) + delta * h(i));
  return out;
}

// Mean score with the outcome and treatment integrated out under the law the
// base nuisances describe: P(D = 1 | X) = m, E[Y | D, X] = l + theta (D - m)
// (PLR) or g_D(X) (IRM). Scores are affine in Y for fixed D, so plugging in
// the conditional mean is exact.
double expected_mean_score(const DesignMatrix& dm, Estimand estimand, const Nuisances& law,
                           const Nuisances& eval, double theta) {
  const Index n = dm.rows();
  const Vector m = law.propensity;
  Vector y1(n), y0(n);
  if (estimand == Estimand::PLR) {
    y1 = law.outcome_mean.array() + theta * (1.0 - m.array());
    y0 = law.outcome_mean.array() - theta * m.array();
  } else {
    y1 = law.g1;
    y0 = law.g0;
  }
  const Vector ones = Vector::Ones(n);
  const Vector zeros = Vector::Zero(n);
  const double share = pairwise_mean(dm.d);
  LinearScore s1, s0;
  switch (estimand) {
    case Estimand::PLR:
      s1 = plr_score(y1, ones, eval.outcome_mean, eval.propensity);
      s0 = plr_score(y0, zeros, eval.outcome_mean, eval.propensity);
      break;
    case Estimand::IrmAte:
      s1 = irm_ate_score(y1, ones, eval.g0, eval.g1, eval.propensity);
      s0 = irm_ate_score(y0, zeros, eval.g0, eval.g1, eval.propensity);
      break;
    case Estimand::IrmAtte:
      s1 = irm_atte_score(y1, ones, eval.g0, eval.propensity, share);
      s0 = irm_atte_score(y0, zeros, eval.g0, eval.propensity, share);
      break;
  }
  const Vector psi = m.array() * (s1.a.array() * theta + s1.b.array()) +
                     (1.0 - m.array()) * (s0.a.array() * theta + s0.b.array());
  return pairwise_mean(psi);
}

double empirical_mean_score(const DesignMatrix& dm, Estimand estimand, const Nuisances& eval,
                            double theta) {
  const LinearScore s = score_of(dm, estimand, eval);
  return pairwise_mean((s.a * theta + s.b).eval());
}

// Baseline outcome function g(X) = E[Y | D = 0, X] of the law.
Vector baseline_outcome(Estimand estimand, const Nuisances& nu, double theta) {
  if (estimand == Estimand::PLR) return nu.outcome_mean - theta * nu.propensity;
  return nu.g0;
}

// Naive plug-in moment (Y - theta D - g(X)) D.
Vector plugin_score(const Vector& y, const Vector& d, const Vector& g, double theta) {
  return ((y - theta * d - g).array() * d.array()).matrix();
}

double slope_of(const std::vector<double>& log_delta, const std::vector<double>& log_s) {
  const double n = static_cast<double>(log_delta.size());
  const double mx = std::accumulate(log_delta.begin(), log_delta.end(), 0.0) / n;
  const double my = std::accumulate(log_s.begin(), log_s.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < log_delta.size(); ++i) {
    sxy += (log_delta[i] - mx) * (log_s[i] - my);
    sxx += (log_delta[i] - mx) * (log_delta[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace

ProbeReport orthogonality_probe(const DesignMatrix& dm, const DmlConfig& cfg, Estimand estimand,
                                const std::vector<double>& deltas) {
  for (double d : deltas)
    if (!(d > 0 && d <= 0.5)) throw Error(errc::kConfigError, "probe delta must lie in (0, 0.5]");

  Nuisances nu;
  if (cfg.no_split) {
    nu = crossfit_impl(dm, cfg, estimand, nullptr, true);
  } else {
    const FoldPlan plan = draw_balanced_plan(dm, cfg, 0);
    nu = crossfit_impl(dm, cfg, estimand, &plan, true);
  }
  const EffectEstimate est = solve_score(dm, cfg, estimand, nu);
  const double theta = est.theta;

  // The law needs a propensity inside [0, 1].
  Nuisances law = nu;
  law.propensity = nu.propensity.cwiseMax(0.0).cwiseMin(1.0);
  if (estimand != Estimand::PLR)
    law.propensity = law.propensity.cwiseMax(1e-6).cwiseMin(1.0 - 1e-6);

  std::vector<std::pair<std::string, Vector>> directions;
  directions.emplace_back("shift", Vector::Ones(dm.rows()));
  const Matrix cov = dm.covariates();
  if (cov.cols() > 0) {
    const double mu = pairwise_mean(cov.col(0));
    const double sd = std::sqrt(pairwise_mean((cov.col(0).array() - mu).square()));
    if (sd > 0) directions.emplace_back("tilt", ((cov.col(0).array() - mu) / sd).matrix());
  }

  ProbeReport report;
  report.estimand = estimand;
  report.theta = theta;
  const double base_expected = expected_mean_score(dm, estimand, law, law, theta);
  const double base_empirical = empirical_mean_score(dm, estimand, law, theta);
  const Vector g_base = baseline_outcome(estimand, law, theta);
  const Vector m = law.propensity;
  const Vector y1 = estimand == Estimand::PLR
                        ? (law.outcome_mean.array() + theta * (1.0 - m.array())).matrix()
                        : law.g1;
  const Vector y0 = estimand == Estimand::PLR
                        ? (law.outcome_mean.array() - theta * m.array()).matrix()
                        : law.g0;
  auto plugin_expected = [&](const Vector& g) {
    const Vector treated = plugin_score(y1, Vector::Ones(dm.rows()), g, theta);
    return pairwise_mean((m.array() * treated.array()).matrix());
  };
  const double plugin_base_expected = plugin_expected(g_base);
  const double plugin_base_empirical = pairwise_mean(plugin_score(dm.y, dm.d, g_base, theta));

  for (const auto& [name, h] : directions) {
    std::vector<double> log_delta, log_s;
    bool positive = true;
    for (double delta : deltas) {
      const Nuisances p = perturbed(law, estimand, h, delta);
      ProbeRow row;
      row.direction = name;
      row.delta = delta;
      row.sensitivity =
          std::abs(expected_mean_score(dm, estimand, law, p, theta) - base_expected) / delta;
      row.empirical_sensitivity =
          std::abs(empirical_mean_score(dm, estimand, p, theta) - base_empirical) / delta;
      const Vector g_pert = g_base + delta * h;
      row.plugin_sensitivity = std::abs(plugin_expected(g_pert) - plugin_base_expected) / delta;
      row.plugin_empirical_sensitivity =
          std::abs(pairwise_mean(plugin_score(dm.y, dm.d, g_pert, theta)) - plugin_base_empirical) /
          delta;
      report.rows.push_back(row);
      positive = positive && row.sensitivity > 0;
      log_delta.push_back(std::log(delta));
      log_s.push_back(std::log(row.sensitivity));
    }
    const double slope = (positive && deltas.size() >= 2) ? slope_of(log_delta, log_s)
                                                          : std::numeric_limits<double>::quiet_NaN();
    report.slopes.emplace_back(name, slope);
  }
  return report;
}

}  // namespace odml
