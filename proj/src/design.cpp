#include "odml/design.hpp"

#include <cmath>

#include <fmt/format.h>

#include "odml/error.hpp"

namespace odml {

std::string_view panel_name(Panel p) {
  switch (p) {
    case Panel::LatLon: return "lat_lon";
    case Panel::DistPotosi: return "dist_potosi";
    case Panel::DistBoundary: return "dist_boundary";
  }
  return "?";
}

std::string_view panel_letter(Panel p) {
  switch (p) {
    case Panel::LatLon: return "A";
    case Panel::DistPotosi: return "B";
    case Panel::DistBoundary: return "C";
  }
  return "?";
}

Panel parse_panel(std::string_view s) {
  if (s == "lat_lon" || s == "A" || s == "a") return Panel::LatLon;
  if (s == "dist_potosi" || s == "B" || s == "b") return Panel::DistPotosi;
  if (s == "dist_boundary" || s == "C" || s == "c") return Panel::DistBoundary;
  throw Error(errc::kConfigError, fmt::format("unknown panel '{}'", s));
}

nlohmann::json to_json(const DesignSpec& spec) {
  nlohmann::json j;
  j["panel"] = panel_name(spec.panel);
  if (std::isfinite(spec.band_km)) j["band_km"] = spec.band_km;
  else j["band_km"] = nullptr;
  j["geo"] = spec.include_geo_controls;
  j["fe"] = spec.include_boundary_fe;
  j["demo"] = spec.include_demographics;
  j["intercept"] = spec.include_intercept;
  j["running"] = spec.include_running_controls;
  return j;
}

DesignSpec design_spec_from_json(const nlohmann::json& j) {
  DesignSpec s;
  try {
    if (j.contains("panel")) s.panel = parse_panel(j.at("panel").get<std::string>());
    if (j.contains("band_km")) {
      s.band_km = j.at("band_km").is_null() ? std::numeric_limits<double>::infinity()
                                            : j.at("band_km").get<double>();
    }
    s.include_geo_controls = j.value("geo", s.include_geo_controls);
    s.include_boundary_fe = j.value("fe", s.include_boundary_fe);
    s.include_demographics = j.value("demo", s.include_demographics);
    s.include_intercept = j.value("intercept", s.include_intercept);
    s.include_running_controls = j.value("running", s.include_running_controls);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("design spec: {}", e.what()));
  }
  if (!(s.band_km > 0)) throw Error(errc::kConfigError, "band_km must be positive");
  return s;
}

Matrix DesignMatrix::covariates() const {
  if (!has_intercept) return x;
  return x.rightCols(x.cols() - 1);
}

Matrix DesignMatrix::regressors() const {
  Matrix r(x.rows(), x.cols() + 1);
  r.col(0) = d;
  r.rightCols(x.cols()) = x;
  return r;
}

std::vector<std::string> DesignMatrix::regressor_names() const {
  std::vector<std::string> names{"mita"};
  names.insert(names.end(), column_names.begin(), column_names.end());
  return names;
}

namespace {

struct Block {
  std::string name;
  Vector values;
};

std::vector<Block> build_blocks(const Dataset& ds, const DesignSpec& spec) {
  const Index n = ds.size();
  std::vector<Block> blocks;
  if (spec.include_intercept) blocks.push_back({"intercept", Vector::Ones(n)});

  auto add_scalar_poly = [&](Column c, std::string_view stem) {
    Vector p1(n), p2(n), p3(n);
    for (Index i = 0; i < n; ++i) {
      const auto p = poly_scalar(ds.col(c)(i));
      p1(i) = p(0);
      p2(i) = p(1);
      p3(i) = p(2);
    }
    blocks.push_back({std::string(stem), std::move(p1)});
    blocks.push_back({fmt::format("{}^2", stem), std::move(p2)});
    blocks.push_back({fmt::format("{}^3", stem), std::move(p3)});
  };

  switch (spec.panel) {
    case Panel::LatLon: {
      static const std::array<const char*, 9> names = {
          "lon", "lat", "lon^2", "lon*lat", "lat^2", "lon^3", "lon^2*lat", "lon*lat^2", "lat^3"};
      Matrix poly(n, 9);
      for (Index i = 0; i < n; ++i)
        poly.row(i) = poly_latlon(ds.col(Column::Lon)(i), ds.col(Column::Lat)(i)).transpose();
      for (Index k = 0; k < 9; ++k) blocks.push_back({names[static_cast<std::size_t>(k)], poly.col(k)});
      break;
    }
    case Panel::DistPotosi: add_scalar_poly(Column::DistPotosi, "dpot"); break;
    case Panel::DistBoundary: add_scalar_poly(Column::DistBoundary, "dbnd"); break;
  }

  auto add_column = [&](Column c) {
    blocks.push_back({std::string(default_header(c)), ds.col(c)});
  };
  if (spec.include_geo_controls) {
    add_column(Column::Elevation);
    add_column(Column::Slope);
  }
  if (spec.include_boundary_fe) {
    add_column(Column::Seg1);
    add_column(Column::Seg2);
    add_column(Column::Seg3);
  }
  if (spec.include_demographics) {
    add_column(Column::Infants);
    add_column(Column::Children);
    add_column(Column::Adults);
  }
  if (spec.include_running_controls) {
    if (spec.panel != Panel::LatLon) {
      add_column(Column::Lon);
      add_column(Column::Lat);
    }
    if (spec.panel != Panel::DistPotosi) add_column(Column::DistPotosi);
    if (spec.panel != Panel::DistBoundary) add_column(Column::DistBoundary);
  }
  return blocks;
}

}  // namespace

std::vector<std::string> design_column_names(const DesignSpec& spec) {
  const Dataset one(Matrix::Ones(1, kNumericColumns), {"x"});
  std::vector<std::string> names;
  for (auto& b : build_blocks(one, spec)) names.push_back(std::move(b.name));
  return names;
}

DesignMatrix build_design(const Dataset& full, const DesignSpec& spec) {
  const Dataset ds = restrict_band(full, spec.band_km);
  if (ds.empty())
    throw Error(errc::kEmptyDesign, fmt::format("no rows with dist_boundary within {} km", spec.band_km));

  DesignMatrix dm;
  dm.y = ds.col(Column::LogConsumption);
  dm.d = ds.col(Column::Mita);
  dm.cluster_ids = ds.district();
  dm.has_intercept = spec.include_intercept;
  if (dm.d.minCoeff() == dm.d.maxCoeff())
    throw Error(errc::kConstantTreatment,
                fmt::format("mita is constant ({}) across {} rows", dm.d(0), ds.size()));

  std::vector<Block> blocks = build_blocks(ds, spec);
  std::erase_if(blocks, [](const Block& b) { return (b.values.array() == 0.0).all(); });
  dm.x.resize(ds.size(), static_cast<Index>(blocks.size()));
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    dm.x.col(static_cast<Index>(k)) = blocks[k].values;
    dm.column_names.push_back(std::move(blocks[k].name));
  }
  return dm;
}

}  // namespace odml
