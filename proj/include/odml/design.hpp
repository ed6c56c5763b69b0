#pragma once

#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/data.hpp"
#include "odml/numeric.hpp"

namespace odml {

/// Running variable entering the cubic polynomial block.
enum class Panel { LatLon, DistPotosi, DistBoundary };

std::string_view panel_name(Panel p);   // "lat_lon", "dist_potosi", "dist_boundary"
std::string_view panel_letter(Panel p); // "A", "B", "C"
Panel parse_panel(std::string_view s);  // accepts names or letters

struct DesignSpec {
  Panel panel = Panel::DistPotosi;
  double band_km = 100.0;  // +inf keeps every row
  bool include_geo_controls = true;
  bool include_boundary_fe = true;
  bool include_demographics = true;
  bool include_intercept = true;
  // Adds the running variables not already in the polynomial block as linear
  // terms. Off for replication cells; simulation designs switch it on so every
  // covariate of the synthetic data enters X.
  bool include_running_controls = false;
};

nlohmann::json to_json(const DesignSpec& spec);
DesignSpec design_spec_from_json(const nlohmann::json& j);

struct DesignMatrix {
  Vector y;
  Vector d;
  Matrix x;
  std::vector<std::string> cluster_ids;
  std::vector<std::string> column_names;
  bool has_intercept = false;

  Index rows() const { return y.size(); }
  /// X without its all-ones column; what the nuisance learners see.
  Matrix covariates() const;
  /// [d | x], the OLS regressor matrix; first column labeled "mita".
  Matrix regressors() const;
  std::vector<std::string> regressor_names() const;
};

/// Monomials lon^a lat^b with 1 <= a + b <= 3:
/// (lon, lat, lon^2, lon*lat, lat^2, lon^3, lon^2*lat, lon*lat^2, lat^3).
template <typename Scalar>
Eigen::Matrix<Scalar, 9, 1> poly_latlon(Scalar lon, Scalar lat) {
  Eigen::Matrix<Scalar, 9, 1> out;
  out << lon, lat, lon * lon, lon * lat, lat * lat, lon * lon * lon, lon * lon * lat,
      lon * lat * lat, lat * lat * lat;
  return out;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> poly_scalar(Scalar dist) {
  return Eigen::Matrix<Scalar, 3, 1>(dist, dist * dist, dist * dist * dist);
}

/// Column labels build_design would produce for a spec, before any all-zero
/// column is dropped.
std::vector<std::string> design_column_names(const DesignSpec& spec);

/// Band restriction, then X in the fixed order
/// [intercept] + polynomial block + [elev, slope] + [seg1..3] + [infants, children, adults]
/// (+ linear running controls when requested). Columns that are identically
/// zero in the banded sample are dropped.
DesignMatrix build_design(const Dataset& ds, const DesignSpec& spec);

}  // namespace odml
