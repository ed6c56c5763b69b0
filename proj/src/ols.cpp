#include "odml/ols.hpp"

#include <cmath>
#include <future>
#include <unordered_map>

#include <fmt/format.h>

#include "odml/error.hpp"

namespace odml {

OlsFit ols_fit(const Matrix& regressors, const Vector& y,
               std::vector<std::string> column_names, bool centered_r2) {
  const Index n = regressors.rows();
  const Index k = regressors.cols();
  if (y.size() != n) throw Error(errc::kDimensionMismatch, "y and regressors differ in rows");
  if (n < k) throw Error(errc::kSingularDesign, fmt::format("{} rows for {} regressors", n, k));

  Eigen::ColPivHouseholderQR<Matrix> qr(regressors);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < k)
    throw Error(errc::kSingularDesign,
                fmt::format("regressor matrix has rank {} < {} columns", qr.rank(), k));

  OlsFit fit;
  fit.n = n;
  fit.k = k;
  fit.column_names = std::move(column_names);
  fit.beta = qr.solve(y);
  fit.residuals = y - regressors * fit.beta;

  const Matrix r = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
  const Matrix r_inv =
      r.triangularView<Eigen::Upper>().solve(Matrix::Identity(k, k));
  const Matrix bread_permuted = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  fit.bread = perm * bread_permuted * perm.transpose();

  const double ssr = pairwise_sum(fit.residuals.array().square());
  double sst = 0;
  if (centered_r2) {
    const double ybar = pairwise_mean(y);
    sst = pairwise_sum((y.array() - ybar).square());
  } else {
    sst = pairwise_sum(y.array().square());
  }
  fit.r_squared = sst > 0 ? 1.0 - ssr / sst : 1.0;
  const double sigma2 = n > k ? ssr / static_cast<double>(n - k) : 0.0;
  fit.vcov = sigma2 * fit.bread;
  return fit;
}

OlsFit ols_fit(const DesignMatrix& dm) {
  return ols_fit(dm.regressors(), dm.y, dm.regressor_names(), dm.has_intercept);
}

std::vector<Index> cluster_index(const std::vector<std::string>& ids, Index* n_clusters) {
  std::unordered_map<std::string, Index> seen;
  std::vector<Index> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto [it, inserted] = seen.emplace(id, static_cast<Index>(seen.size()));
    out.push_back(it->second);
  }
  if (n_clusters) *n_clusters = static_cast<Index>(seen.size());
  return out;
}

Matrix cluster_robust_vcov(const OlsFit& fit, const Matrix& regressors,
                           const std::vector<std::string>& cluster_ids,
                           ClusterCorrection correction) {
  const Index n = regressors.rows();
  const Index k = regressors.cols();
  if (static_cast<Index>(cluster_ids.size()) != n || fit.residuals.size() != n)
    throw Error(errc::kDimensionMismatch, "cluster ids, residuals and regressors disagree");
  Index g = 0;
  const auto groups = cluster_index(cluster_ids, &g);
  if (g < 2) throw Error(errc::kTooFewClusters, fmt::format("{} cluster(s); need at least 2", g));

  Matrix cluster_scores = Matrix::Zero(g, k);
  for (Index i = 0; i < n; ++i)
    cluster_scores.row(groups[static_cast<std::size_t>(i)]) += fit.residuals(i) * regressors.row(i);
  const Matrix meat = cluster_scores.transpose() * cluster_scores;

  double c = 1.0;
  if (correction == ClusterCorrection::CR1) {
    c = (static_cast<double>(g) / static_cast<double>(g - 1)) *
        (static_cast<double>(n - 1) / static_cast<double>(n - k));
  }
  Matrix v = c * fit.bread * meat * fit.bread;
  return 0.5 * (v + v.transpose());
}

std::string_view stars_text(Stars s) {
  switch (s) {
    case Stars::None: return "";
    case Stars::Ten: return "*";
    case Stars::Five: return "**";
    case Stars::One: return "***";
  }
  return "";
}

std::string_view stars_label(Stars s) { return s == Stars::None ? "none" : stars_text(s); }

Stars parse_stars(std::string_view s) {
  if (s == "***") return Stars::One;
  if (s == "**") return Stars::Five;
  if (s == "*") return Stars::Ten;
  if (s == "none" || s.empty()) return Stars::None;
  throw Error(errc::kParseError, fmt::format("bad significance marker '{}'", s));
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

Stars stars_for(double coef, double se) {
  if (!(se > 0)) return Stars::None;
  const double p = normal_two_sided_p(coef / se);
  if (p < 0.01) return Stars::One;
  if (p < 0.05) return Stars::Five;
  if (p < 0.10) return Stars::Ten;
  return Stars::None;
}

CellResult ols_cell(const Dataset& ds, Panel panel, double band_km,
                    ClusterCorrection correction) {
  DesignSpec spec;
  spec.panel = panel;
  spec.band_km = band_km;
  const DesignMatrix dm = build_design(ds, spec);
  const Matrix reg = dm.regressors();
  const OlsFit fit = ols_fit(reg, dm.y, dm.regressor_names(), dm.has_intercept);
  const Matrix v = cluster_robust_vcov(fit, reg, dm.cluster_ids, correction);

  CellResult cell;
  cell.panel = panel;
  cell.band_km = band_km;
  cell.coef = fit.beta(0);
  cell.se = std::sqrt(v(0, 0));
  cell.stars = stars_for(cell.coef, cell.se);
  cell.n = dm.rows();
  cluster_index(dm.cluster_ids, &cell.clusters);
  cell.r_squared = fit.r_squared;
  return cell;
}

ResultGrid replicate_table2(const Dataset& ds, ClusterCorrection correction) {
  std::array<std::array<std::future<CellResult>, 3>, 3> pending;
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t b = 0; b < 3; ++b)
      pending[p][b] = std::async(std::launch::async, [&, p, b] {
        return ols_cell(ds, kPanels[p], kBands[b], correction);
      });
  ResultGrid grid;
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t b = 0; b < 3; ++b) grid[p][b] = pending[p][b].get();
  return grid;
}

namespace {

std::string_view panel_title(Panel p) {
  switch (p) {
    case Panel::LatLon: return "Panel A. Cubic Polynomial in Latitude and Longitude";
    case Panel::DistPotosi: return "Panel B. Cubic Polynomial in Distance to Potosi";
    case Panel::DistBoundary: return "Panel C. Cubic Polynomial in Distance to Mita Boundary";
  }
  return "";
}

}  // namespace

std::string format_table2_text(const ResultGrid& grid) {
  constexpr int kLabel = 18;
  constexpr int kCell = 16;
  std::string out;
  out += fmt::format("{:<{}}{:^{}}\n", "", kLabel, "Log Equiv. Household Consumption (2001)", 3 * kCell);
  out += fmt::format("{:<{}}", "Sample within:", kLabel);
  for (double b : kBands) out += fmt::format("{:>{}}", fmt::format("< {:g} km", b), kCell);
  out += '\n';
  out += fmt::format("{:<{}}{:>{}}{:>{}}{:>{}}\n", "", kLabel, "(1)", kCell, "(2)", kCell, "(3)", kCell);
  for (std::size_t p = 0; p < 3; ++p) {
    out += panel_title(kPanels[p]);
    out += '\n';
    out += fmt::format("{:<{}}", "Mita", kLabel);
    for (const auto& c : grid[p])
      out += fmt::format("{:>{}}", fmt::format("{:.4f}{:<3}", c.coef, stars_text(c.stars)), kCell);
    out += '\n';
    out += fmt::format("{:<{}}", "", kLabel);
    for (const auto& c : grid[p])
      out += fmt::format("{:>{}}", fmt::format("({:.3f})   ", c.se), kCell);
    out += '\n';
    out += fmt::format("{:<{}}", "R-squared", kLabel);
    for (const auto& c : grid[p]) out += fmt::format("{:>{}}", fmt::format("{:.3f}   ", c.r_squared), kCell);
    out += '\n';
  }
  auto footer = [&](std::string_view label, auto value) {
    out += fmt::format("{:<{}}", label, kLabel);
    for (std::size_t b = 0; b < 3; ++b) out += fmt::format("{:>{}}", fmt::format("{}   ", value(b)), kCell);
    out += '\n';
  };
  footer("Geo. controls", [](std::size_t) { return std::string("yes"); });
  footer("Boundary F.E.s", [](std::size_t) { return std::string("yes"); });
  footer("Clusters", [&](std::size_t b) { return std::to_string(grid[0][b].clusters); });
  footer("Observations", [&](std::size_t b) { return std::to_string(grid[0][b].n); });
  return out;
}

std::string format_table2_tsv(const ResultGrid& grid) {
  std::string out = "panel\tband_km\tcoef\tse\tstars\tn\tclusters\tr2\n";
  for (const auto& row : grid)
    for (const auto& c : row)
      out += fmt::format("{}\t{:g}\t{:.6g}\t{:.6g}\t{}\t{}\t{}\t{:.6g}\n", panel_letter(c.panel),
                         c.band_km, c.coef, c.se, stars_label(c.stars), c.n, c.clusters,
                         c.r_squared);
  return out;
}

}  // namespace odml
