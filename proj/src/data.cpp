#include "odml/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "odml/error.hpp"

namespace odml {

namespace {

struct ColumnNames {
  std::string_view role;
  std::string_view header;
};

constexpr std::array<ColumnNames, kNumericColumns> kNames = {{
    {"mita_dummy", "mita"},
    {"longitude", "lon"},
    {"latitude", "lat"},
    {"dist_potosi", "dpot"},
    {"dist_boundary", "dbnd"},
    {"elevation", "elev"},
    {"slope", "slope"},
    {"n_infants", "infants"},
    {"n_children", "children"},
    {"n_adults", "adults"},
    {"seg1", "seg1"},
    {"seg2", "seg2"},
    {"seg3", "seg3"},
    {"log_consumption", "lhhequiv"},
}};

// One CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string_view role_name(Column c) { return kNames[static_cast<std::size_t>(c)].role; }
std::string_view default_header(Column c) {
  return kNames[static_cast<std::size_t>(c)].header;
}

bool is_binary_column(Column c) {
  return c == Column::Mita || c == Column::Seg1 || c == Column::Seg2 || c == Column::Seg3;
}

bool is_count_column(Column c) {
  return c == Column::Infants || c == Column::Children || c == Column::Adults;
}

ColumnSchema ColumnSchema::defaults() {
  ColumnSchema s;
  for (Column c : kAllColumns) s.headers[static_cast<std::size_t>(c)] = default_header(c);
  s.district_header = kDistrictHeader;
  return s;
}

ColumnSchema ColumnSchema::from_json(const nlohmann::json& remap) {
  ColumnSchema s = defaults();
  if (!remap.is_object()) throw Error(errc::kConfigError, "schema sidecar must be a JSON object");
  for (const auto& [role, header] : remap.items()) {
    if (!header.is_string())
      throw Error(errc::kConfigError, fmt::format("schema entry '{}' must be a string", role));
    if (role == kDistrictRole) {
      s.district_header = header.get<std::string>();
      continue;
    }
    const auto it = std::find_if(kNames.begin(), kNames.end(),
                                 [&](const ColumnNames& n) { return n.role == role; });
    if (it == kNames.end())
      throw Error(errc::kConfigError, fmt::format("unknown schema role '{}'", role));
    s.headers[static_cast<std::size_t>(it - kNames.begin())] = header.get<std::string>();
  }
  return s;
}

ColumnSchema ColumnSchema::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::kIoError, fmt::format("cannot open {}", path.string()));
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("{}: {}", path.string(), e.what()));
  }
}

Dataset::Dataset(Matrix numeric, std::vector<std::string> district,
                 std::vector<std::string> extra_names,
                 std::vector<std::vector<std::string>> extra_values)
    : numeric_(std::move(numeric)),
      district_(std::move(district)),
      extra_names_(std::move(extra_names)),
      extra_values_(std::move(extra_values)) {
  if (numeric_.cols() != static_cast<Index>(kNumericColumns) ||
      static_cast<Index>(district_.size()) != numeric_.rows() ||
      extra_names_.size() != extra_values_.size())
    throw Error(errc::kDimensionMismatch, "dataset blocks disagree in shape");
  for (const auto& v : extra_values_)
    if (static_cast<Index>(v.size()) != numeric_.rows())
      throw Error(errc::kDimensionMismatch, "extra column length differs from row count");
}

Dataset Dataset::select(const std::vector<Index>& rows) const {
  Matrix num(static_cast<Index>(rows.size()), numeric_.cols());
  std::vector<std::string> dist;
  dist.reserve(rows.size());
  std::vector<std::vector<std::string>> extra(extra_values_.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    num.row(static_cast<Index>(r)) = numeric_.row(rows[r]);
    dist.push_back(district_[static_cast<std::size_t>(rows[r])]);
    for (std::size_t j = 0; j < extra.size(); ++j)
      extra[j].push_back(extra_values_[j][static_cast<std::size_t>(rows[r])]);
  }
  return Dataset(std::move(num), std::move(dist), extra_names_, std::move(extra));
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.numeric_.rows() == b.numeric_.rows() && a.numeric_ == b.numeric_ &&
         a.district_ == b.district_ && a.extra_names_ == b.extra_names_ &&
         a.extra_values_ == b.extra_values_;
}

Dataset load_dataset(std::istream& source, const ColumnSchema& schema) {
  std::string line;
  if (!std::getline(source, line) || trim(line).empty())
    throw Error(errc::kEmptyInput, "no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = std::string(trim(h));
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t j = 0; j < header.size(); ++j) position.emplace(header[j], j);

  std::array<std::size_t, kNumericColumns> numeric_pos{};
  std::vector<bool> used(header.size(), false);
  for (Column c : kAllColumns) {
    const auto it = position.find(schema.header(c));
    if (it == position.end())
      throw Error(errc::kMissingColumn, fmt::format("{} (role {})", schema.header(c), role_name(c)));
    numeric_pos[static_cast<std::size_t>(c)] = it->second;
    used[it->second] = true;
  }
  const auto dit = position.find(schema.district_header);
  if (dit == position.end())
    throw Error(errc::kMissingColumn, fmt::format("{} (role {})", schema.district_header, kDistrictRole));
  const std::size_t district_pos = dit->second;
  used[district_pos] = true;

  std::vector<std::size_t> extra_pos;
  std::vector<std::string> extra_names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!used[j]) {
      extra_pos.push_back(j);
      extra_names.push_back(header[j]);
    }
  }

  std::vector<double> values;
  std::vector<std::string> district;
  std::vector<std::vector<std::string>> extra(extra_pos.size());
  std::size_t row = 0;
  while (std::getline(source, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(errc::kParseError,
                  fmt::format("row {}: expected {} fields, found {}", row, header.size(),
                              fields.size()));
    for (Column c : kAllColumns) {
      const std::size_t j = numeric_pos[static_cast<std::size_t>(c)];
      double v = 0;
      if (!parse_double(fields[j], v))
        throw Error(errc::kParseError,
                    fmt::format("row {}, column {} ({}): cannot parse '{}'", row, j,
                                header[j], fields[j]));
      values.push_back(v);
    }
    const std::string_view d = trim(fields[district_pos]);
    if (d.empty())
      throw Error(errc::kParseError,
                  fmt::format("row {}, column {} ({}): empty district", row, district_pos,
                              header[district_pos]));
    district.emplace_back(d);
    for (std::size_t k = 0; k < extra_pos.size(); ++k)
      extra[k].push_back(std::string(trim(fields[extra_pos[k]])));
  }
  if (row == 0) throw Error(errc::kEmptyInput, "header present but no data rows");

  const Index n = static_cast<Index>(row);
  Matrix numeric =
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          values.data(), n, static_cast<Index>(kNumericColumns));
  return Dataset(std::move(numeric), std::move(district), std::move(extra_names),
                 std::move(extra));
}

Dataset load_dataset_file(const std::filesystem::path& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(errc::kIoError, fmt::format("cannot open {}", path.string()));
  return load_dataset(in, schema);
}

void write_dataset(std::ostream& out, const Dataset& ds, const ColumnSchema& schema) {
  for (Column c : kAllColumns) out << quote_if_needed(schema.header(c)) << ',';
  out << quote_if_needed(schema.district_header);
  for (const auto& name : ds.extra_names()) out << ',' << quote_if_needed(name);
  out << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.numeric().cols(); ++j)
      out << fmt::format("{}", ds.numeric()(i, j)) << ',';
    out << quote_if_needed(ds.district()[static_cast<std::size_t>(i)]);
    for (const auto& col : ds.extra_values())
      out << ',' << quote_if_needed(col[static_cast<std::size_t>(i)]);
    out << '\n';
  }
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(errc::kEmptyInput, "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SummaryTable summarize(const Dataset& ds) {
  if (ds.empty()) throw Error(errc::kEmptyInput, "cannot summarize an empty dataset");
  if (ds.size() < 2)
    throw Error(errc::kNotEnoughRows, "standard deviation needs at least two rows");
  SummaryTable table;
  const double n = static_cast<double>(ds.size());
  for (Column c : kAllColumns) {
    const auto col = ds.col(c);
    ColumnSummary s;
    s.name = std::string(role_name(c));
    s.count = ds.size();
    s.mean = pairwise_sum(col) / n;
    const Vector centered = col.array() - s.mean;
    s.sd = std::sqrt(pairwise_sum(centered.array().square()) / (n - 1.0));
    std::vector<double> v(col.data(), col.data() + col.size());
    s.min = col.minCoeff();
    s.max = col.maxCoeff();
    s.q25 = quantile(v, 0.25);
    s.q50 = quantile(v, 0.50);
    s.q75 = quantile(v, 0.75);
    table.push_back(std::move(s));
  }
  return table;
}

std::string format_summary(const SummaryTable& table) {
  std::string out = fmt::format("{:<16}{:>8}{:>13}{:>13}{:>13}{:>13}{:>13}{:>13}{:>13}\n",
                                "column", "count", "mean", "sd", "min", "25%", "50%", "75%",
                                "max");
  for (const auto& s : table)
    out += fmt::format("{:<16}{:>8}{:>13.6g}{:>13.6g}{:>13.6g}{:>13.6g}{:>13.6g}{:>13.6g}{:>13.6g}\n",
                       s.name, s.count, s.mean, s.sd, s.min, s.q25, s.q50, s.q75, s.max);
  return out;
}

Dataset restrict_band(const Dataset& ds, double band_km) {
  std::vector<Index> keep;
  const auto dist = ds.col(Column::DistBoundary);
  for (Index i = 0; i < ds.size(); ++i) {
    const bool inside = kBandStrict ? dist(i) < band_km : dist(i) <= band_km;
    if (inside) keep.push_back(i);
  }
  if (static_cast<Index>(keep.size()) == ds.size()) return ds;
  return ds.select(keep);
}

std::vector<Violation> validate(const Dataset& ds) {
  std::vector<Violation> out;
  for (Index i = 0; i < ds.size(); ++i) {
    for (Column c : kAllColumns) {
      const double v = ds.col(c)(i);
      const std::string name(role_name(c));
      if (!std::isfinite(v)) {
        out.push_back({i, name, "finite"});
      } else if (is_binary_column(c) && v != 0.0 && v != 1.0) {
        out.push_back({i, name, "binary {0,1}"});
      } else if (is_count_column(c)) {
        if (v < 0) out.push_back({i, name, "count >= 0"});
        else if (v != std::floor(v)) out.push_back({i, name, "count integer"});
      } else if (c == Column::DistBoundary && !(v > 0)) {
        out.push_back({i, name, "dist_boundary > 0"});
      }
    }
    if (ds.district()[static_cast<std::size_t>(i)].empty())
      out.push_back({i, std::string(kDistrictRole), "nonempty cluster key"});
  }
  return out;
}

std::string format_violation(const Violation& v) {
  return fmt::format("row {}: column {} violates rule '{}'", v.row, v.column, v.rule);
}

}  // namespace odml
