#pragma once

#include <array>
#include <string>
#include <vector>

#include "odml/data.hpp"
#include "odml/design.hpp"
#include "odml/numeric.hpp"

namespace odml {

struct OlsFit {
  Vector beta;
  Vector residuals;
  Matrix vcov;      // classical sigma^2 (X'X)^-1
  Matrix bread;     // (X'X)^-1
  double r_squared = 0;
  Index n = 0;
  Index k = 0;
  std::vector<std::string> column_names;
};

/// Pivoted-QR relative rank tolerance.
inline constexpr double kRankTolerance = 1e-10;

/// Least squares through column-pivoted Householder QR. R-squared uses a
/// centered total sum of squares when `centered_r2` is set (design has an
/// intercept), uncentered otherwise.
OlsFit ols_fit(const Matrix& regressors, const Vector& y,
               std::vector<std::string> column_names, bool centered_r2);

/// Regresses y on [d | x]; coefficient 0 is labeled "mita".
OlsFit ols_fit(const DesignMatrix& dm);

enum class ClusterCorrection { CR0, CR1 };

/// Dense 0..G-1 relabeling of string cluster keys in order of first appearance.
std::vector<Index> cluster_index(const std::vector<std::string>& ids, Index* n_clusters = nullptr);

/// Sandwich c (X'X)^-1 (sum_g X_g'u_g u_g'X_g) (X'X)^-1. CR1 uses
/// c = G/(G-1) * (n-1)/(n-k); CR0 uses c = 1.
Matrix cluster_robust_vcov(const OlsFit& fit, const Matrix& regressors,
                           const std::vector<std::string>& cluster_ids,
                           ClusterCorrection correction = ClusterCorrection::CR1);

enum class Stars { None, Ten, Five, One };

std::string_view stars_text(Stars s);  // "", "*", "**", "***"
std::string_view stars_label(Stars s); // "none", "*", "**", "***"
Stars parse_stars(std::string_view s);

/// Two-sided p-value of a z statistic under the standard normal.
double normal_two_sided_p(double z);
Stars stars_for(double coef, double se);

struct CellResult {
  Panel panel = Panel::LatLon;
  double band_km = 0;
  double coef = 0;
  double se = 0;
  Stars stars = Stars::None;
  Index n = 0;
  Index clusters = 0;
  double r_squared = 0;
};

inline constexpr std::array<Panel, 3> kPanels = {Panel::LatLon, Panel::DistPotosi,
                                                 Panel::DistBoundary};
inline constexpr std::array<double, 3> kBands = {100.0, 75.0, 50.0};

/// cells[panel][band], panels A-C by rows and 100/75/50 km by columns.
using ResultGrid = std::array<std::array<CellResult, 3>, 3>;

/// One replication cell: OLS with all controls, district-clustered SE.
CellResult ols_cell(const Dataset& ds, Panel panel, double band_km,
                    ClusterCorrection correction = ClusterCorrection::CR1);

/// All nine panel x band cells, computed concurrently.
ResultGrid replicate_table2(const Dataset& ds,
                            ClusterCorrection correction = ClusterCorrection::CR1);

std::string format_table2_text(const ResultGrid& grid);
std::string format_table2_tsv(const ResultGrid& grid);

}  // namespace odml
