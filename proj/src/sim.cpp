#include "odml/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "odml/error.hpp"

namespace odml {

namespace {

const boost::math::normal kStdNormal;

double phi_cdf(double z) { return boost::math::cdf(kStdNormal, z); }
double phi_inv(double p) { return boost::math::quantile(kStdNormal, p); }
double phi_pdf(double z) { return boost::math::pdf(kStdNormal, z); }

// Uniform on the open interval (0, 1).
double open_uniform(Rng& rng) {
  double u = uniform01(rng);
  while (u == 0.0) u = uniform01(rng);
  return u;
}

}  // namespace

std::string_view g_form_name(GForm g) {
  switch (g) {
    case GForm::Linear: return "linear";
    case GForm::Nonlinear: return "nonlinear";
    case GForm::Step: return "step";
  }
  return "?";
}

GForm parse_g_form(std::string_view s) {
  if (s == "linear") return GForm::Linear;
  if (s == "nonlinear") return GForm::Nonlinear;
  if (s == "step") return GForm::Step;
  throw Error(errc::kConfigError, fmt::format("unknown g_form '{}'", s));
}

nlohmann::json to_json(const DgpConfig& c) {
  nlohmann::json theta;
  if (c.effect.heterogeneous())
    theta = {{"base", c.effect.base}, {"interaction", c.effect.interaction}};
  else
    theta = c.effect.base;
  return {{"n", c.n},
          {"true_theta", theta},
          {"g_form", g_form_name(c.g_form)},
          {"selection_strength", c.selection_strength},
          {"noise_sd", c.noise_sd},
          {"target_treated_share", c.target_treated_share},
          {"copula_correlation", c.copula_correlation},
          {"stratified", c.stratified},
          {"households_per_district", c.households_per_district},
          {"seed", c.seed}};
}

void validate(const DgpConfig& c) {
  if (c.n < 100) throw Error(errc::kConfigError, fmt::format("n must be >= 100 (got {})", c.n));
  if (!(c.target_treated_share > 0 && c.target_treated_share < 1))
    throw Error(errc::kConfigError, "target_treated_share must lie in (0, 1)");
  if (!(c.noise_sd >= 0)) throw Error(errc::kConfigError, "noise_sd must be >= 0");
  if (!(std::abs(c.copula_correlation) < 1))
    throw Error(errc::kConfigError, "copula_correlation must lie in (-1, 1)");
  if (c.households_per_district < 1)
    throw Error(errc::kConfigError, "households_per_district must be >= 1");
  if (!std::isfinite(c.selection_strength) || !std::isfinite(c.effect.base) ||
      !std::isfinite(c.effect.interaction))
    throw Error(errc::kConfigError, "non-finite DGP parameter");
}

DgpConfig dgp_config_from_json(const nlohmann::json& j) {
  DgpConfig c;
  try {
    c.n = j.value("n", c.n);
    if (j.contains("true_theta")) {
      const auto& t = j.at("true_theta");
      if (t.is_number()) {
        c.effect = {t.get<double>(), 0.0};
      } else {
        c.effect.base = t.value("base", c.effect.base);
        c.effect.interaction = t.value("interaction", 0.0);
      }
    }
    if (j.contains("g_form")) c.g_form = parse_g_form(j.at("g_form").get<std::string>());
    c.selection_strength = j.value("selection_strength", c.selection_strength);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    c.target_treated_share = j.value("target_treated_share", c.target_treated_share);
    c.copula_correlation = j.value("copula_correlation", c.copula_correlation);
    c.stratified = j.value("stratified", c.stratified);
    c.households_per_district = j.value("households_per_district", c.households_per_district);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("dgp config: {}", e.what()));
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const GroundTruth& t) {
  return {{"ate", t.ate},
          {"atte", t.atte},
          {"plr_weighted_effect", t.plr_weighted_effect},
          {"intercept_a0", t.intercept_a0},
          {"treated_share", t.treated_share}};
}

const std::vector<MarginalTarget>& calibration_targets() {
  static const std::vector<MarginalTarget> targets = {
      {Column::Lon, -0.334883, 1.203266},      {Column::Lat, -0.053991, 0.820277},
      {Column::DistPotosi, 8.963985, 1.449563}, {Column::DistBoundary, 40.639062, 28.62655},
      {Column::Elevation, 3.840895, 0.378298}, {Column::Slope, 7.129698, 4.1237},
      {Column::Infants, 0.50203, 0.730186},    {Column::Children, 1.217862, 1.321108},
      {Column::Adults, 2.536536, 1.255328},    {Column::Seg1, kTargetSeg1, 0.280351},
      {Column::Seg2, kTargetSeg2, 0.453407},   {Column::Seg3, kTargetSeg3, 0.486595},
  };
  return targets;
}

// ---------------------------------------------------------------------------
// Truncated marginals

std::pair<double, double> truncated_normal_moments(double mu, double sigma, double lower) {
  const double alpha = (lower - mu) / sigma;
  const double tail = phi_cdf(-alpha);
  const double lambda = phi_pdf(alpha) / tail;
  const double mean = mu + sigma * lambda;
  const double var = sigma * sigma * (1.0 + alpha * lambda - lambda * lambda);
  return {mean, std::sqrt(std::max(var, 0.0))};
}

std::pair<double, double> rounded_count_moments(double mu, double sigma, int lower) {
  const double denom = phi_cdf(-((lower - 0.5 - mu) / sigma));
  const int top = static_cast<int>(std::ceil(std::max<double>(lower, mu) + 14.0 * sigma)) + 1;
  double m1 = 0, m2 = 0;
  for (int k = lower; k <= top; ++k) {
    const double p = (phi_cdf(-((k - 0.5 - mu) / sigma)) - phi_cdf(-((k + 0.5 - mu) / sigma))) / denom;
    m1 += p * k;
    m2 += p * k * k;
  }
  return {m1, std::sqrt(std::max(m2 - m1 * m1, 0.0))};
}

namespace {

// Newton iteration on (mu, log sigma) with a finite-difference Jacobian.
template <typename Moments>
std::pair<double, double> solve_moments(double mean, double sd, Moments moments) {
  double mu = mean, ls = std::log(sd);
  auto residual = [&](double m, double l) {
    const auto [mm, ss] = moments(m, std::exp(l));
    return std::array<double, 2>{(mm - mean) / sd, (ss - sd) / sd};
  };
  auto norm = [](const std::array<double, 2>& r) { return std::hypot(r[0], r[1]); };
  auto r = residual(mu, ls);
  for (int it = 0; it < 200 && norm(r) > 1e-12; ++it) {
    const double h = 1e-6;
    const auto rm = residual(mu + h * sd, ls);
    const auto rl = residual(mu, ls + h);
    const double j00 = (rm[0] - r[0]) / (h * sd), j01 = (rl[0] - r[0]) / h;
    const double j10 = (rm[1] - r[1]) / (h * sd), j11 = (rl[1] - r[1]) / h;
    const double det = j00 * j11 - j01 * j10;
    if (det == 0 || !std::isfinite(det)) break;
    const double dmu = -(j11 * r[0] - j01 * r[1]) / det;
    const double dls = -(-j10 * r[0] + j00 * r[1]) / det;
    double step = 1.0;
    bool moved = false;
    for (int b = 0; b < 40; ++b, step /= 2) {
      // Infeasible targets push sigma off to infinity; stay in a bounded box.
      if (std::abs(mu + step * dmu - mean) > 100 * sd || std::abs(ls + step * dls - std::log(sd)) > std::log(100.0))
        continue;
      const auto trial = residual(mu + step * dmu, ls + step * dls);
      if (norm(trial) < norm(r)) {
        mu += step * dmu;
        ls += step * dls;
        r = trial;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  if (norm(r) > 1e-8)
    throw Error(errc::kCalibrationFailure,
                fmt::format("cannot match mean {} and sd {} with a truncated normal", mean, sd));
  return {mu, std::exp(ls)};
}

}  // namespace

std::pair<double, double> solve_truncated_normal(double mean, double sd, double lower) {
  return solve_moments(mean, sd, [lower](double m, double s) { return truncated_normal_moments(m, s, lower); });
}

std::pair<double, double> solve_rounded_count(double mean, double sd, int lower) {
  return solve_moments(mean, sd, [lower](double m, double s) { return rounded_count_moments(m, s, lower); });
}

namespace {

// Draw from N(mu, sigma^2) truncated to (lower, inf) at latent normal z.
double truncated_from_latent(double z, double mu, double sigma, double lower) {
  const double alpha = (lower - mu) / sigma;
  // P(X > x) = Phi(-z) * Phi(-alpha).
  const double upper_tail = phi_cdf(-z) * phi_cdf(-alpha);
  if (upper_tail <= 0) return lower;
  return std::max(lower, mu - sigma * phi_inv(upper_tail));
}

struct Marginals {
  std::pair<double, double> dbnd, slope, infants, children, adults;
};

const Marginals& marginals() {
  static const Marginals m = [] {
    const auto& t = calibration_targets();
    auto find = [&](Column c) {
      return *std::find_if(t.begin(), t.end(), [c](const MarginalTarget& x) { return x.column == c; });
    };
    Marginals out;
    const auto dbnd = find(Column::DistBoundary), slope = find(Column::Slope);
    const auto inf = find(Column::Infants), chi = find(Column::Children), adu = find(Column::Adults);
    out.dbnd = solve_truncated_normal(dbnd.mean, dbnd.sd, 0.0);
    out.slope = solve_truncated_normal(slope.mean, slope.sd, 0.0);
    out.infants = solve_rounded_count(inf.mean, inf.sd, 0);
    out.children = solve_rounded_count(chi.mean, chi.sd, 0);
    out.adults = solve_rounded_count(adu.mean, adu.sd, 1);
    return out;
  }();
  return m;
}

double target_mean(Column c) {
  for (const auto& t : calibration_targets())
    if (t.column == c) return t.mean;
  return 0;
}
double target_sd(Column c) {
  for (const auto& t : calibration_targets())
    if (t.column == c) return t.sd;
  return 1;
}

double z_dbnd_from_latent(double z) {
  const auto [mu, sigma] = marginals().dbnd;
  return (truncated_from_latent(z, mu, sigma, 0.0) - target_mean(Column::DistBoundary)) /
         target_sd(Column::DistBoundary);
}

// Standardized (dist_potosi, dist_boundary) for a large iid population draw;
// the propensity intercept and the population truths are computed on it.
struct Population {
  std::vector<double> z_dpot, z_dbnd;
};

constexpr Index kPopulationSize = 1'000'000;
constexpr std::uint64_t kPopulationSeed = 0x6d69746150u;

std::shared_ptr<const Population> population(double rho) {
  static std::mutex mu;
  static std::map<double, std::shared_ptr<const Population>> cache;
  std::lock_guard lock(mu);
  if (auto it = cache.find(rho); it != cache.end()) return it->second;
  auto pop = std::make_shared<Population>();
  pop->z_dpot.resize(kPopulationSize);
  pop->z_dbnd.resize(kPopulationSize);
  Rng rng(kPopulationSeed);
  const double tail = std::sqrt(1.0 - rho * rho);
  for (Index i = 0; i < kPopulationSize; ++i) {
    const double a = phi_inv(open_uniform(rng));
    const double b = phi_inv(open_uniform(rng));
    pop->z_dpot[static_cast<std::size_t>(i)] = a;
    pop->z_dbnd[static_cast<std::size_t>(i)] = z_dbnd_from_latent(rho * a + tail * b);
  }
  cache.emplace(rho, pop);
  return pop;
}

double selection_index(double z_dpot, double z_dbnd) { return -0.8 * z_dpot - 0.6 * z_dbnd; }

struct Calibration {
  GroundTruth truth;
  double step_mean = 0;  // E[1{z_dbnd > 0}]
};

Calibration calibrate(const DgpConfig& cfg) {
  static std::mutex mu;
  static std::map<std::array<double, 5>, Calibration> cache;
  const std::array<double, 5> key{cfg.copula_correlation, cfg.selection_strength,
                                  cfg.target_treated_share, cfg.effect.base, cfg.effect.interaction};
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const auto pop = population(cfg.copula_correlation);
  const std::size_t n = pop->z_dpot.size();
  std::vector<double> index(n);
  for (std::size_t i = 0; i < n; ++i)
    index[i] = cfg.selection_strength * selection_index(pop->z_dpot[i], pop->z_dbnd[i]);
  auto share_at = [&](double a0) {
    Vector p(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) p(static_cast<Index>(i)) = sigmoid(a0 + index[i]);
    return pairwise_mean(p);
  };
  double lo = -40, hi = 40;
  if (!(share_at(lo) < cfg.target_treated_share && share_at(hi) > cfg.target_treated_share))
    throw Error(errc::kCalibrationFailure,
                fmt::format("propensity intercept does not bracket treated share {}", cfg.target_treated_share));
  for (int it = 0; it < 100 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (share_at(mid) < cfg.target_treated_share ? lo : hi) = mid;
  }
  const double a0 = 0.5 * (lo + hi);

  Vector m(static_cast<Index>(n)), mz(static_cast<Index>(n)), w(static_cast<Index>(n)),
      wz(static_cast<Index>(n)), step(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const Index k = static_cast<Index>(i);
    const double p = sigmoid(a0 + index[i]);
    m(k) = p;
    mz(k) = p * pop->z_dpot[i];
    w(k) = p * (1 - p);
    wz(k) = w(k) * pop->z_dpot[i];
    step(k) = pop->z_dbnd[i] > 0 ? 1.0 : 0.0;
  }
  Calibration c;
  const auto& e = cfg.effect;
  c.truth.intercept_a0 = a0;
  c.truth.treated_share = pairwise_mean(m);
  // dist_potosi is normal with its target mean, so E[z_dpot] = 0 exactly.
  c.truth.ate = e.base;
  if (e.heterogeneous()) {
    c.truth.atte = e.base + e.interaction * pairwise_sum(mz) / pairwise_sum(m);
    c.truth.plr_weighted_effect = e.base + e.interaction * pairwise_sum(wz) / pairwise_sum(w);
  } else {
    c.truth.atte = e.base;
    c.truth.plr_weighted_effect = e.base;
  }
  c.step_mean = pairwise_mean(step);
  std::lock_guard lock(mu);
  cache.emplace(key, c);
  return c;
}

// Latent standard normals, one column per simulated covariate.
Matrix latent_normals(Index n, Index cols, bool stratified, Rng& rng) {
  Matrix z(n, cols);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index j = 0; j < cols; ++j) {
    if (stratified) {
      std::iota(perm.begin(), perm.end(), Index{0});
      shuffle_in_place(perm, rng);
      for (Index i = 0; i < n; ++i)
        z(i, j) = phi_inv((static_cast<double>(perm[static_cast<std::size_t>(i)]) + open_uniform(rng)) /
                          static_cast<double>(n));
    } else {
      for (Index i = 0; i < n; ++i) z(i, j) = phi_inv(open_uniform(rng));
    }
  }
  return z;
}

constexpr std::array<double, 4> kSegmentEffects = {0.10, -0.05, 0.05, 0.0};

}  // namespace

GroundTruth ground_truth(const DgpConfig& cfg) {
  validate(cfg);
  return calibrate(cfg).truth;
}

Simulation simulate(const DgpConfig& cfg) {
  validate(cfg);
  const Calibration cal = calibrate(cfg);
  const Marginals& mg = marginals();
  const Index n = cfg.n;

  enum Latent { kLon, kLat, kDpot, kDbnd, kElev, kSlope, kInf, kChi, kAdu, kSeg, kLatentCount };
  Rng latent_rng(derive_seed(cfg.seed, "sim-latent"));
  Matrix z = latent_normals(n, kLatentCount, cfg.stratified, latent_rng);
  const double rho = cfg.copula_correlation;
  z.col(kDbnd) = rho * z.col(kDpot) + std::sqrt(1 - rho * rho) * z.col(kDbnd);

  Matrix x = Matrix::Zero(n, static_cast<Index>(kNumericColumns));
  auto put = [&](Column c, Index i, double v) { x(i, static_cast<Index>(c)) = v; };
  const double p1 = kTargetSeg1, p2 = p1 + kTargetSeg2, p3 = p2 + kTargetSeg3;
  for (Index i = 0; i < n; ++i) {
    put(Column::Lon, i, target_mean(Column::Lon) + target_sd(Column::Lon) * z(i, kLon));
    put(Column::Lat, i, target_mean(Column::Lat) + target_sd(Column::Lat) * z(i, kLat));
    put(Column::DistPotosi, i, target_mean(Column::DistPotosi) + target_sd(Column::DistPotosi) * z(i, kDpot));
    put(Column::DistBoundary, i, truncated_from_latent(z(i, kDbnd), mg.dbnd.first, mg.dbnd.second, 0.0));
    put(Column::Elevation, i, target_mean(Column::Elevation) + target_sd(Column::Elevation) * z(i, kElev));
    put(Column::Slope, i, truncated_from_latent(z(i, kSlope), mg.slope.first, mg.slope.second, 0.0));
    auto count = [&](Latent l, const std::pair<double, double>& ms, int lower) {
      return std::floor(truncated_from_latent(z(i, l), ms.first, ms.second, lower - 0.5) + 0.5);
    };
    put(Column::Infants, i, count(kInf, mg.infants, 0));
    put(Column::Children, i, count(kChi, mg.children, 0));
    put(Column::Adults, i, count(kAdu, mg.adults, 1));
    const double u = phi_cdf(z(i, kSeg));
    put(Column::Seg1, i, u < p1 ? 1.0 : 0.0);
    put(Column::Seg2, i, u >= p1 && u < p2 ? 1.0 : 0.0);
    put(Column::Seg3, i, u >= p2 && u < p3 ? 1.0 : 0.0);
  }

  auto zc = [&](Column c, Index i) { return (x(i, static_cast<Index>(c)) - target_mean(c)) / target_sd(c); };
  const double seg_mean = kTargetSeg1 * kSegmentEffects[0] + kTargetSeg2 * kSegmentEffects[1] +
                          kTargetSeg3 * kSegmentEffects[2] + (1 - p3) * kSegmentEffects[3];
  double extras_mean = 0;
  if (cfg.g_form == GForm::Step) extras_mean = 0.3 * (cal.step_mean - 0.5);
  // E[tau(X) D] = share * ATTE.
  const double c0 = kTargetOutcomeMean - cal.truth.treated_share * cal.truth.atte - extras_mean;

  Rng d_rng(derive_seed(cfg.seed, "sim-treatment"));
  Rng y_rng(derive_seed(cfg.seed, "sim-noise"));
  for (Index i = 0; i < n; ++i) {
    const double zd = zc(Column::DistPotosi, i), zb = zc(Column::DistBoundary, i);
    const double p = sigmoid(cal.truth.intercept_a0 + cfg.selection_strength * selection_index(zd, zb));
    const double d = uniform01(d_rng) < p ? 1.0 : 0.0;
    double g = c0 + 0.10 * zc(Column::Lon, i) - 0.08 * zc(Column::Lat, i) + 0.15 * zd + 0.12 * zb -
               0.10 * zc(Column::Elevation, i) + 0.05 * zc(Column::Slope, i) -
               0.06 * zc(Column::Infants, i) - 0.08 * zc(Column::Children, i) +
               0.10 * zc(Column::Adults, i);
    const Index seg = x(i, static_cast<Index>(Column::Seg1)) == 1   ? 0
                      : x(i, static_cast<Index>(Column::Seg2)) == 1 ? 1
                      : x(i, static_cast<Index>(Column::Seg3)) == 1 ? 2
                                                                    : 3;
    g += kSegmentEffects[static_cast<std::size_t>(seg)] - seg_mean;
    if (cfg.g_form == GForm::Nonlinear) g += 0.25 * std::sin(2 * zd) + 0.15 * (zb * zb - 1);
    if (cfg.g_form == GForm::Step) g += 0.3 * ((zb > 0 ? 1.0 : 0.0) - 0.5);
    const double tau = cfg.effect.base + cfg.effect.interaction * zd;
    const double noise = cfg.noise_sd * phi_inv(open_uniform(y_rng));
    put(Column::Mita, i, d);
    put(Column::LogConsumption, i, tau * d + g + noise);
  }

  std::vector<std::string> district(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    district[static_cast<std::size_t>(i)] = fmt::format("s{:05d}", i / cfg.households_per_district);
  return {Dataset(std::move(x), std::move(district)), cal.truth};
}

// ---------------------------------------------------------------------------
// Monte Carlo

std::string_view estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::PLR: return "plr";
    case EstimatorKind::IrmAte: return "irm-ate";
    case EstimatorKind::IrmAtte: return "irm-atte";
    case EstimatorKind::DiffMeans: return "diff-means";
  }
  return "?";
}

EstimatorKind parse_estimator(std::string_view s) {
  if (s == "plr") return EstimatorKind::PLR;
  if (s == "irm-ate") return EstimatorKind::IrmAte;
  if (s == "irm-atte") return EstimatorKind::IrmAtte;
  if (s == "diff-means") return EstimatorKind::DiffMeans;
  throw Error(errc::kConfigError, fmt::format("unknown estimator '{}'", s));
}

DesignSpec simulation_design() {
  DesignSpec s;
  s.panel = Panel::DistPotosi;
  s.band_km = std::numeric_limits<double>::infinity();
  s.include_running_controls = true;
  return s;
}

nlohmann::json to_json(const EstimatorSpec& e) {
  return {{"kind", estimator_name(e.kind)}, {"dml", to_json(e.dml)}, {"design", to_json(e.design)}};
}

EstimatorSpec estimator_spec_from_json(const nlohmann::json& j) {
  EstimatorSpec e;
  e.design = simulation_design();
  try {
    if (j.contains("kind")) e.kind = parse_estimator(j.at("kind").get<std::string>());
    if (j.contains("dml")) e.dml = dml_config_from_json(j.at("dml"));
    if (j.contains("design")) e.design = design_spec_from_json(j.at("design"));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(errc::kConfigError, fmt::format("estimator config: {}", ex.what()));
  }
  return e;
}

EffectEstimate diff_in_means(const Vector& y, const Vector& d) {
  std::vector<Index> t, c;
  for (Index i = 0; i < d.size(); ++i) (d(i) == 1.0 ? t : c).push_back(i);
  if (t.size() < 2 || c.size() < 2)
    throw Error(errc::kConstantTreatment, "difference in means needs two rows per arm");
  auto moments = [&](const std::vector<Index>& rows) {
    const Vector v = y(rows);
    const double m = pairwise_mean(v);
    const double var = pairwise_sum((v.array() - m).square()) / static_cast<double>(v.size() - 1);
    return std::pair{m, var / static_cast<double>(v.size())};
  };
  const auto [m1, v1] = moments(t);
  const auto [m0, v0] = moments(c);
  EffectEstimate e;
  e.estimand = Estimand::IrmAte;
  e.n = y.size();
  e.theta = m1 - m0;
  e.se = std::sqrt(v1 + v0);
  e.ci95 = {e.theta - 1.96 * e.se, e.theta + 1.96 * e.se};
  e.repeat_theta = {e.theta};
  e.repeat_se = {e.se};
  return e;
}

nlohmann::json to_json(const McReport& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& p : r.per_rep) {
    nlohmann::json row = {{"rep", p.rep}, {"ok", p.ok}};
    if (p.ok) {
      row["theta"] = p.theta;
      row["se"] = p.se;
    } else {
      row["error"] = p.error;
    }
    reps.push_back(std::move(row));
  }
  return {{"estimator", r.estimator},   {"reps", r.reps},         {"failures", r.failures},
          {"truth", r.truth},           {"mean_theta", r.mean_theta}, {"mean_bias", r.mean_bias},
          {"rmse", r.rmse},             {"coverage95", r.coverage95}, {"mean_se", r.mean_se},
          {"sd_theta", r.sd_theta},     {"mc_se", r.mc_se},
          {"ground_truth", to_json(r.ground_truth)}, {"per_rep", reps}};
}

std::string format_mc_tsv(const McReport& r) {
  std::string out =
      "estimator\treps\tfailures\ttruth\tmean_theta\tmean_bias\trmse\tcoverage95\tmean_se\tsd_theta\tmc_se\n";
  out += fmt::format("{}\t{}\t{}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\n", r.estimator,
                     r.reps, r.failures, r.truth, r.mean_theta, r.mean_bias, r.rmse, r.coverage95,
                     r.mean_se, r.sd_theta, r.mc_se);
  return out;
}

namespace {

RepResult run_rep(const DgpConfig& base, const EstimatorSpec& est, Index rep) {
  RepResult r;
  r.rep = rep;
  try {
    DgpConfig cfg = base;
    cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(rep));
    const Simulation sim = simulate(cfg);
    const DesignMatrix dm = build_design(sim.data, est.design);
    EffectEstimate e;
    DmlConfig dml = est.dml;
    dml.seed = derive_seed(derive_seed(est.dml.seed, "mc"), static_cast<std::uint64_t>(rep));
    dml.threads = 1;
    switch (est.kind) {
      case EstimatorKind::PLR: e = estimate(dm, dml, Estimand::PLR); break;
      case EstimatorKind::IrmAte: e = estimate(dm, dml, Estimand::IrmAte); break;
      case EstimatorKind::IrmAtte: e = estimate(dm, dml, Estimand::IrmAtte); break;
      case EstimatorKind::DiffMeans: e = diff_in_means(dm.y, dm.d); break;
    }
    r.ok = std::isfinite(e.theta) && std::isfinite(e.se);
    r.theta = e.theta;
    r.se = e.se;
    if (!r.ok) r.error = "non-finite estimate";
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

McReport monte_carlo(const DgpConfig& cfg, const EstimatorSpec& est, Index reps, int threads) {
  if (reps < 2) throw Error(errc::kConfigError, fmt::format("reps must be >= 2 (got {})", reps));
  validate(cfg);
  const GroundTruth truth = ground_truth(cfg);

  std::vector<RepResult> results(static_cast<std::size_t>(reps));
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers =
      std::min<unsigned>(threads > 0 ? static_cast<unsigned>(threads) : hw, static_cast<unsigned>(reps));
  std::atomic<Index> next{0};
  auto work = [&] {
    for (Index r = next++; r < reps; r = next++) results[static_cast<std::size_t>(r)] = run_rep(cfg, est, r);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  McReport rep;
  rep.estimator = std::string(estimator_name(est.kind));
  rep.reps = reps;
  rep.ground_truth = truth;
  rep.truth = est.kind == EstimatorKind::IrmAtte ? truth.atte : truth.ate;
  rep.per_rep = results;
  std::vector<double> thetas, ses;
  Index covered = 0;
  for (const auto& r : results) {
    if (!r.ok) {
      ++rep.failures;
      continue;
    }
    thetas.push_back(r.theta);
    ses.push_back(r.se);
    if (std::abs(r.theta - rep.truth) <= 1.96 * r.se) ++covered;
  }
  if (static_cast<double>(rep.failures) > kMaxRepFailureRate * static_cast<double>(reps) || thetas.size() < 2) {
    const auto first = std::find_if(results.begin(), results.end(), [](const RepResult& r) { return !r.ok; });
    throw Error(errc::kMcUnstable,
                fmt::format("{} of {} reps failed; first failure at rep {}: {}", rep.failures, reps,
                            first->rep, first->error));
  }
  const Eigen::Map<const Vector> th(thetas.data(), static_cast<Index>(thetas.size()));
  const Eigen::Map<const Vector> se(ses.data(), static_cast<Index>(ses.size()));
  const double k = static_cast<double>(thetas.size());
  rep.mean_theta = pairwise_mean(th);
  rep.mean_bias = rep.mean_theta - rep.truth;
  rep.rmse = std::sqrt(pairwise_mean((th.array() - rep.truth).square()));
  rep.coverage95 = static_cast<double>(covered) / k;
  rep.mean_se = pairwise_mean(se);
  rep.sd_theta = std::sqrt(pairwise_sum((th.array() - rep.mean_theta).square()) / (k - 1));
  rep.mc_se = rep.sd_theta / std::sqrt(k);
  return rep;
}

}  // namespace odml
