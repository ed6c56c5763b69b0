#include "odml/report.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <unistd.h>

#include "odml/error.hpp"

namespace odml {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::kIoError, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(errc::kIoError, "sha256 failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  const auto tmp = path.string() + fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(errc::kIoError, fmt::format("cannot write {}", tmp));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(errc::kIoError, fmt::format("short write to {}", tmp));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(errc::kIoError, fmt::format("cannot move {} into place: {}", path.string(), ec.message()));
  }
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& d : m.inputs) inputs.push_back({{"path", d.path}, {"sha256", d.sha256}});
  return {{"command", m.command},       {"config", m.config},
          {"inputs", inputs},           {"seed", m.seed},
          {"version", m.version},       {"started_at", m.started_at},
          {"finished_at", m.finished_at}};
}

RunManifest run_manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.value("version", std::string(kVersion));
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    for (const auto& d : j.value("inputs", nlohmann::json::array()))
      m.inputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("manifest: {}", e.what()));
  }
  return m;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

std::string format_dml_tsv(const DmlGrid& grid) {
  std::string out = "panel\tband_km\ttheta\tse\tstars\tn\tclusters\n";
  for (const auto& row : grid)
    for (const auto& c : row)
      out += fmt::format("{}\t{:g}\t{:.6g}\t{:.6g}\t{}\t{}\t{}\n", panel_letter(c.panel), c.band_km,
                         c.estimate.theta, c.estimate.se, stars_label(c.stars), c.estimate.n,
                         c.clusters);
  return out;
}

std::string format_dml_text(const DmlGrid& grid, std::string_view title) {
  constexpr int kLabel = 18;
  constexpr int kCell = 16;
  std::string out = fmt::format("{}\n", title);
  out += fmt::format("{:<{}}", "Sample within:", kLabel);
  for (double b : kBands) out += fmt::format("{:>{}}", fmt::format("< {:g} km", b), kCell);
  out += '\n';
  for (const auto& row : grid) {
    out += fmt::format("Panel {}\n", panel_letter(row[0].panel));
    out += fmt::format("{:<{}}", "Mita", kLabel);
    for (const auto& c : row)
      out += fmt::format("{:>{}}", fmt::format("{:.4f}{:<3}", c.estimate.theta, stars_text(c.stars)), kCell);
    out += '\n';
    out += fmt::format("{:<{}}", "", kLabel);
    for (const auto& c : row) out += fmt::format("{:>{}}", fmt::format("({:.3f})   ", c.estimate.se), kCell);
    out += '\n';
  }
  out += fmt::format("{:<{}}", "Observations", kLabel);
  for (const auto& c : grid[0]) out += fmt::format("{:>{}}", fmt::format("{}   ", c.estimate.n), kCell);
  out += '\n';
  return out;
}

std::string_view dml_table_stem(Estimand e) {
  switch (e) {
    case Estimand::PLR: return "table3";
    case Estimand::IrmAte: return "table4";
    case Estimand::IrmAtte: return "table4_atte";
  }
  return "table";
}

std::vector<GradCheckRow> gradcheck_grid(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "gradcheck-data"));
  Matrix x(12, 3);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) x(i, j) = 2 * uniform01(rng) - 1;
  Vector y_reg(12), y_cls(12);
  for (Index i = 0; i < 12; ++i) {
    y_reg(i) = x(i, 0) - 0.5 * x(i, 1) * x(i, 2) + 0.1 * (uniform01(rng) - 0.5);
    y_cls(i) = uniform01(rng) < sigmoid(2 * x(i, 0) - x(i, 2)) ? 1.0 : 0.0;
  }
  y_cls(0) = 0;
  y_cls(1) = 1;
  std::vector<GradCheckRow> rows;
  for (const auto& hidden : std::vector<std::vector<int>>{{}, {4}, {3, 3}, {8, 4}})
    for (Activation act : {Activation::Relu, Activation::Tanh})
      for (bool classifier : {false, true}) {
        LearnerSpec spec = classifier ? default_mlp_classifier() : default_mlp_regressor();
        spec.hidden_layers = hidden;
        spec.activation = act;
        spec.ridge_lambda = 0.01;
        spec.seed = derive_seed(seed, "gradcheck-init");
        rows.push_back({hidden, act, classifier, grad_check(spec, x, classifier ? y_cls : y_reg)});
      }
  return rows;
}

std::string format_gradcheck_tsv(const std::vector<GradCheckRow>& rows) {
  std::string out = "hidden\tactivation\tloss\tmax_rel_error\n";
  for (const auto& r : rows) {
    std::string hidden = "[";
    for (std::size_t i = 0; i < r.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(r.hidden[i]);
    hidden += "]";
    out += fmt::format("{}\t{}\t{}\t{:.6g}\n", hidden, activation_name(r.activation),
                       r.classifier ? "bce" : "mse", r.max_rel_error);
  }
  return out;
}

std::string format_probe_tsv(const ProbeReport& report) {
  std::string out =
      "direction\tdelta\tsensitivity\tempirical_sensitivity\tplugin_sensitivity\tplugin_empirical_sensitivity\n";
  for (const auto& r : report.rows)
    out += fmt::format("{}\t{:g}\t{:.6g}\t{:.6g}\t{:.6g}\t{:.6g}\n", r.direction, r.delta, r.sensitivity,
                       r.empirical_sensitivity, r.plugin_sensitivity, r.plugin_empirical_sensitivity);
  return out;
}

}  // namespace odml
