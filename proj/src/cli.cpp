#include "odml/cli.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "odml/data.hpp"
#include "odml/design.hpp"
#include "odml/dml.hpp"
#include "odml/error.hpp"
#include "odml/ols.hpp"
#include "odml/report.hpp"
#include "odml/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace odml {

namespace {

constexpr std::uint64_t kDefaultSeed = 20241206;

bool is_input_error(const std::string& kind) {
  static const std::set<std::string> input = {errc::kMissingColumn, errc::kParseError,
                                              errc::kEmptyInput,    errc::kNotEnoughRows,
                                              errc::kConfigError,   errc::kIoError,
                                              errc::kCalibrationFailure};
  return input.count(kind) > 0;
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("{}: {}", path.string(), e.what()));
  }
}


json band_to_json(double band) { return std::isfinite(band) ? json(band) : json(nullptr); }

// Fills every seed the user did not pin from the top-level seed.
json resolve_dml_config(json j, std::uint64_t seed) {
  if (!j.is_object()) j = json::object();
  if (!j.contains("seed")) j["seed"] = derive_seed(seed, "dml");
  auto learner = [&](const char* key, const LearnerSpec& fallback, const char* label) {
    if (!j.contains(key)) j[key] = to_json(fallback);
    if (!j[key].contains("seed")) j[key]["seed"] = derive_seed(seed, label);
  };
  learner("outcome_learner", default_mlp_regressor(), "outcome-learner");
  learner("treatment_learner", default_mlp_classifier(), "treatment-learner");
  return to_json(dml_config_from_json(j));
}

json resolve_dgp_config(json j, std::uint64_t seed) {
  if (!j.is_object()) j = json::object();
  if (!j.contains("seed")) j["seed"] = derive_seed(seed, "simulate");
  return to_json(dgp_config_from_json(j));
}

struct Context {
  fs::path out_dir;
  int threads = 0;
  std::ostream& out;
  std::ostream& err;
  std::shared_ptr<spdlog::logger> log;
  std::vector<InputDigest> inputs;

  void write(const std::string& name, std::string_view content) const {
    write_atomic(out_dir / name, content);
    log->info("wrote {}", (out_dir / name).string());
  }
};

Dataset load_checked(Context& ctx, const json& cfg) {
  const fs::path data = cfg.at("data").get<std::string>();
  if (!fs::exists(data)) throw Error(errc::kIoError, fmt::format("data file not found: {}", data.string()));
  ColumnSchema schema = ColumnSchema::defaults();
  if (cfg.contains("schema") && !cfg.at("schema").is_null()) {
    const fs::path sp = cfg.at("schema").get<std::string>();
    schema = ColumnSchema::from_json_file(sp);
    ctx.inputs.push_back({sp.string(), sha256_file(sp)});
  }
  ctx.inputs.push_back({data.string(), sha256_file(data)});
  Dataset ds = load_dataset_file(data, schema);
  const auto violations = validate(ds);
  if (!violations.empty()) {
    for (const auto& v : violations) ctx.err << format_violation(v) << '\n';
    throw Error(errc::kParseError, fmt::format("{} validation violation(s) in {}", violations.size(), data.string()));
  }
  ctx.log->info("loaded {} rows from {}", ds.size(), data.string());
  return ds;
}

// --------------------------------------------------------------------------
// Commands. Each takes its fully resolved configuration.

void cmd_replicate(Context& ctx, const json& cfg) {
  const Dataset ds = load_checked(ctx, cfg);
  const auto correction = cfg.value("correction", "CR1") == "CR0" ? ClusterCorrection::CR0 : ClusterCorrection::CR1;
  const ResultGrid grid = replicate_table2(ds, correction);
  const std::string text = format_table2_text(grid);
  ctx.write("table2.txt", text);
  ctx.write("table2.tsv", format_table2_tsv(grid));
  ctx.out << text;
}

void cmd_summarize(Context& ctx, const json& cfg) {
  const Dataset ds = load_checked(ctx, cfg);
  const std::string text = format_summary(summarize(ds));
  ctx.write("summary.txt", text);
  ctx.out << text;
}

DmlCell run_cell(const Dataset& ds, const DesignSpec& design, const DmlConfig& dml, Estimand e) {
  const DesignMatrix dm = build_design(ds, design);
  DmlCell cell;
  cell.panel = design.panel;
  cell.band_km = design.band_km;
  cell.estimate = estimate(dm, dml, e);
  cell.stars = stars_for(cell.estimate.theta, cell.estimate.se);
  Index g = 0;
  cluster_index(dm.cluster_ids, &g);
  cell.clusters = g;
  return cell;
}

void cmd_dml(Context& ctx, const json& cfg) {
  const Dataset ds = load_checked(ctx, cfg);
  const Estimand estimand = parse_estimand(cfg.at("model").get<std::string>());
  DmlConfig dml = dml_config_from_json(cfg.at("dml"));
  const DesignSpec base = design_spec_from_json(cfg.at("design"));

  if (!cfg.value("grid", false)) {
    dml.threads = ctx.threads;
    const DmlCell cell = run_cell(ds, base, dml, estimand);
    json j = to_json(cell.estimate, cfg.value("write_psi", false));
    j["panel"] = panel_letter(base.panel);
    j["band_km"] = band_to_json(base.band_km);
    j["stars"] = stars_label(cell.stars);
    j["clusters"] = cell.clusters;
    j["manifest_file"] = "manifest.json";
    ctx.write("estimate.json", dump_json(j));
    ctx.out << fmt::format("{} panel {} band {:g}: theta = {:.4f}{} (se {:.4f}), n = {}\n",
                           estimand_name(estimand), panel_letter(base.panel), base.band_km,
                           cell.estimate.theta, stars_text(cell.stars), cell.estimate.se, cell.estimate.n);
    return;
  }

  DmlGrid grid;
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t b = 0; b < 3; ++b) cells.emplace_back(p, b);
  std::vector<std::exception_ptr> failures(cells.size());
  std::atomic<std::size_t> next{0};
  dml.threads = 1;
  auto work = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      const auto [p, b] = cells[k];
      DesignSpec design = base;
      design.panel = kPanels[p];
      design.band_km = kBands[b];
      try {
        grid[p][b] = run_cell(ds, design, dml, estimand);
      } catch (...) {
        failures[k] = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min<unsigned>(ctx.threads > 0 ? static_cast<unsigned>(ctx.threads) : hw, 9);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);

  json j = {{"model", estimand_name(estimand)}, {"cells", json::array()}, {"manifest_file", "manifest.json"}};
  for (const auto& row : grid)
    for (const auto& c : row) {
      json cell = to_json(c.estimate);
      cell["panel"] = panel_letter(c.panel);
      cell["band_km"] = c.band_km;
      cell["stars"] = stars_label(c.stars);
      cell["clusters"] = c.clusters;
      j["cells"].push_back(std::move(cell));
    }
  const std::string stem(dml_table_stem(estimand));
  const std::string text = format_dml_text(grid, fmt::format("DML {} estimates", estimand_name(estimand)));
  ctx.write("estimate.json", dump_json(j));
  ctx.write(stem + ".tsv", format_dml_tsv(grid));
  ctx.write(stem + ".txt", text);
  ctx.out << text;
}

void cmd_simulate(Context& ctx, const json& cfg) {
  const DgpConfig dgp = dgp_config_from_json(cfg.at("dgp"));
  const Simulation sim = simulate(dgp);
  std::ostringstream csv;
  write_dataset(csv, sim.data);
  ctx.write("synthetic.csv", csv.str());
  json truth = to_json(sim.truth);
  truth["config"] = to_json(dgp);
  ctx.write("truth.json", dump_json(truth));
  ctx.out << fmt::format("simulated {} rows: ATE {:.6g}, ATTE {:.6g}, treated share {:.4f}\n", sim.data.size(),
                         sim.truth.ate, sim.truth.atte, pairwise_mean(sim.data.col(Column::Mita)));
}

void cmd_montecarlo(Context& ctx, const json& cfg) {
  const DgpConfig dgp = dgp_config_from_json(cfg.at("dgp"));
  const EstimatorSpec est = estimator_spec_from_json(cfg.at("estimator"));
  const McReport rep = monte_carlo(dgp, est, cfg.at("reps").get<Index>(), ctx.threads);
  ctx.write("mc_report.json", dump_json(to_json(rep)));
  const std::string tsv = format_mc_tsv(rep);
  ctx.write("mc_report.tsv", tsv);
  ctx.out << tsv;
}

void cmd_gradcheck(Context& ctx, const json& cfg) {
  const auto rows = gradcheck_grid(cfg.at("seed").get<std::uint64_t>());
  const std::string tsv = format_gradcheck_tsv(rows);
  ctx.write("gradcheck.tsv", tsv);
  ctx.out << tsv;
}

void cmd_orthoprobe(Context& ctx, const json& cfg) {
  Dataset ds;
  if (cfg.contains("data") && !cfg.at("data").is_null()) {
    ds = load_checked(ctx, cfg);
  } else {
    ds = simulate(dgp_config_from_json(cfg.at("dgp"))).data;
  }
  const Estimand estimand = parse_estimand(cfg.at("model").get<std::string>());
  DmlConfig dml = dml_config_from_json(cfg.at("dml"));
  dml.threads = ctx.threads;
  const DesignMatrix dm = build_design(ds, design_spec_from_json(cfg.at("design")));
  const ProbeReport report =
      orthogonality_probe(dm, dml, estimand, cfg.at("deltas").get<std::vector<double>>());
  ctx.write("probe.json", dump_json(to_json(report)));
  const std::string tsv = format_probe_tsv(report);
  ctx.write("probe.tsv", tsv);
  ctx.out << tsv;
  for (const auto& [dir, slope] : report.slopes) ctx.out << fmt::format("slope {}: {:.4f}\n", dir, slope);
}

using Command = void (*)(Context&, const json&);

Command lookup(const std::string& name) {
  if (name == "replicate") return cmd_replicate;
  if (name == "summarize") return cmd_summarize;
  if (name == "dml") return cmd_dml;
  if (name == "simulate") return cmd_simulate;
  if (name == "montecarlo") return cmd_montecarlo;
  if (name == "gradcheck") return cmd_gradcheck;
  if (name == "orthoprobe") return cmd_orthoprobe;
  throw Error(errc::kConfigError, fmt::format("unknown command '{}'", name));
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, int verbose) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_st>(err);
  sink->set_pattern("[%l] %v");
  auto log = std::make_shared<spdlog::logger>("odml", sink);
  log->set_level(verbose >= 2 ? spdlog::level::debug
                 : verbose == 1 ? spdlog::level::info
                                : spdlog::level::warn);
  return log;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Replication and double machine learning toolkit", "odml"};
  app.require_subcommand(0, 1);
  std::uint64_t seed = kDefaultSeed;
  int threads = 0;
  int verbose = 0;
  std::string out_dir = ".";
  std::string from_manifest;
  app.add_option("--seed", seed, "Top-level seed; every module seed derives from it")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0: hardware count)")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--verbose", verbose, "Diagnostic level 0-2")->check(CLI::Range(0, 2));
  app.add_option("--from-manifest", from_manifest, "Re-run the command recorded in a manifest.json");

  std::string data, schema, config_path, model = "plr", panel = "B", estimator = "plr";
  std::string outcome_kind, treatment_kind;
  std::optional<double> band;
  bool grid = false, write_psi = false;
  int folds = 0, repeats = 0;
  long long reps = 200;
  std::vector<double> deltas{0.1, 0.05, 0.025};
  std::string correction = "CR1";

  const std::vector<std::string> models{"plr", "irm-ate", "irm-atte"};
  const std::vector<std::string> kinds{"linear_ridge", "logistic", "mlp_regressor", "mlp_classifier", "mean"};

  auto* replicate = app.add_subcommand("replicate", "OLS replication of the nine boundary-band cells");
  replicate->add_option("--data", data, "Household CSV")->required();
  replicate->add_option("--schema", schema, "Column remapping JSON");
  replicate->add_option("--correction", correction, "Cluster correction")->check(CLI::IsMember({"CR0", "CR1"}));

  auto* summarize_cmd = app.add_subcommand("summarize", "Summary statistics of a dataset");
  summarize_cmd->add_option("--data", data, "Household CSV")->required();
  summarize_cmd->add_option("--schema", schema, "Column remapping JSON");

  auto add_dml_options = [&](CLI::App* sub) {
    sub->add_option("--model", model, "plr, irm-ate or irm-atte")->check(CLI::IsMember(models))->capture_default_str();
    sub->add_option("--panel", panel, "A/B/C or lat_lon/dist_potosi/dist_boundary")->capture_default_str();
    sub->add_option("--band", band, "Boundary band in km");
    sub->add_option("--config", config_path, "JSON with DML settings and an optional \"design\" object");
    sub->add_option("--outcome-learner", outcome_kind, "Outcome learner kind")->check(CLI::IsMember(kinds));
    sub->add_option("--treatment-learner", treatment_kind, "Treatment learner kind")->check(CLI::IsMember(kinds));
    sub->add_option("--folds", folds, "Cross-fitting folds")->check(CLI::Range(2, 1000));
    sub->add_option("--repeats", repeats, "Cross-fitting repetitions")->check(CLI::Range(1, 1000));
  };
  auto* dml_cmd = app.add_subcommand("dml", "Cross-fitted PLR / IRM estimate");
  dml_cmd->add_option("--data", data, "Household CSV")->required();
  dml_cmd->add_option("--schema", schema, "Column remapping JSON");
  dml_cmd->add_flag("--grid", grid, "Run all nine panel x band cells");
  dml_cmd->add_flag("--write-psi", write_psi, "Include per-row scores in estimate.json");
  add_dml_options(dml_cmd);

  auto* simulate_cmd = app.add_subcommand("simulate", "Draw a calibrated synthetic dataset");
  simulate_cmd->add_option("--config", config_path, "DGP JSON");

  auto* mc_cmd = app.add_subcommand("montecarlo", "Monte Carlo evaluation of an estimator");
  mc_cmd->add_option("--config", config_path, "JSON with \"dgp\" and \"estimator\" objects");
  mc_cmd->add_option("--estimator", estimator, "plr, irm-ate, irm-atte or diff-means")
      ->check(CLI::IsMember({"plr", "irm-ate", "irm-atte", "diff-means"}))
      ->capture_default_str();
  mc_cmd->add_option("--reps", reps, "Replications")->capture_default_str();

  app.add_subcommand("gradcheck", "Finite-difference check of MLP gradients");

  auto* probe_cmd = app.add_subcommand("orthoprobe", "Score sensitivity to nuisance perturbations");
  probe_cmd->add_option("--data", data, "Household CSV (default: simulate from --config)");
  probe_cmd->add_option("--schema", schema, "Column remapping JSON");
  probe_cmd->add_option("--deltas", deltas, "Perturbation sizes")->capture_default_str();
  add_dml_options(probe_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto log = make_logger(err, verbose);
  Context ctx{out_dir, threads, out, err, log, {}};

  try {
    std::string command;
    json cfg;
    std::vector<InputDigest> recorded;
    if (!from_manifest.empty()) {
      const RunManifest m = run_manifest_from_json(read_json_file(from_manifest));
      command = m.command;
      cfg = m.config;
      seed = m.seed;
      recorded = m.inputs;
      log->info("re-running {} from {}", command, from_manifest);
    } else {
      CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
      if (sub == nullptr) {
        err << app.help();
        return kExitUsage;
      }
      command = sub->get_name();
      const json file = config_path.empty() ? json::object() : read_json_file(config_path);
      if (!config_path.empty()) ctx.inputs.push_back({config_path, sha256_file(config_path)});
      const json schema_json = schema.empty() ? json(nullptr) : json(schema);

      if (command == "replicate") {
        cfg = {{"data", data}, {"schema", schema_json}, {"correction", correction}};
      } else if (command == "summarize") {
        cfg = {{"data", data}, {"schema", schema_json}};
      } else if (command == "dml" || command == "orthoprobe") {
        json dml_json = file;
        dml_json.erase("design");
        dml_json.erase("dgp");
        if (folds) dml_json["k_folds"] = folds;
        if (repeats) dml_json["n_repeats"] = repeats;
        if (!outcome_kind.empty()) {
          const bool clf = outcome_kind == "logistic" || outcome_kind == "mlp_classifier";
          if (clf) throw Error(errc::kConfigError, "outcome learner must be a regressor");
          dml_json["outcome_learner"] =
              outcome_kind == "mlp_regressor" ? to_json(default_mlp_regressor()) : json{{"kind", outcome_kind}};
        }
        if (!treatment_kind.empty())
          dml_json["treatment_learner"] = treatment_kind == "mlp_classifier" ? to_json(default_mlp_classifier())
                                                                             : json{{"kind", treatment_kind}};
        const bool synthetic = command == "orthoprobe" && data.empty();
        DesignSpec design = synthetic ? simulation_design() : DesignSpec{};
        if (file.contains("design")) design = design_spec_from_json(file.at("design"));
        design.panel = parse_panel(panel);
        if (band) design.band_km = *band;
        cfg = {{"model", model}, {"dml", resolve_dml_config(dml_json, seed)}, {"design", to_json(design)}};
        if (command == "dml") {
          cfg["data"] = data;
          cfg["schema"] = schema_json;
          cfg["grid"] = grid;
          cfg["write_psi"] = write_psi;
        } else {
          cfg["deltas"] = deltas;
          if (synthetic) {
            json dgp = file.value("dgp", json::object());
            if (!dgp.contains("n")) dgp["n"] = 5000;
            cfg["dgp"] = resolve_dgp_config(dgp, seed);
            cfg["data"] = nullptr;
          } else {
            cfg["data"] = data;
            cfg["schema"] = schema_json;
          }
        }
      } else if (command == "simulate") {
        cfg = {{"dgp", resolve_dgp_config(file.value("dgp", file), seed)}};
      } else if (command == "montecarlo") {
        if (reps < 2) throw Error(errc::kConfigError, fmt::format("reps must be >= 2 (got {})", reps));
        json est = file.value("estimator", json::object());
        if (!est.contains("kind")) est["kind"] = estimator;
        json dml = est.value("dml", json::object());
        est["dml"] = resolve_dml_config(dml, seed);
        if (!est.contains("design")) est["design"] = to_json(simulation_design());
        cfg = {{"dgp", resolve_dgp_config(file.value("dgp", json::object()), seed)},
               {"estimator", to_json(estimator_spec_from_json(est))},
               {"reps", reps}};
      } else if (command == "gradcheck") {
        cfg = {{"seed", derive_seed(seed, "gradcheck")}};
      }
    }

    fs::create_directories(ctx.out_dir);
    RunManifest manifest;
    manifest.command = command;
    manifest.config = cfg;
    manifest.seed = seed;
    manifest.started_at = utc_now();
    lookup(command)(ctx, cfg);
    for (const auto& r : recorded) {
      const auto now = std::find_if(ctx.inputs.begin(), ctx.inputs.end(),
                                    [&](const InputDigest& d) { return d.path == r.path; });
      if (now != ctx.inputs.end() && now->sha256 != r.sha256)
        log->warn("input {} changed since the manifest was written", r.path);
    }
    if (!from_manifest.empty()) {
      // Config files were folded into the resolved config; keep their digests.
      for (const auto& r : recorded)
        if (std::none_of(ctx.inputs.begin(), ctx.inputs.end(), [&](const InputDigest& d) { return d.path == r.path; }))
          ctx.inputs.push_back(r);
    }
    manifest.inputs = ctx.inputs;
    manifest.finished_at = utc_now();
    ctx.write("manifest.json", dump_json(to_json(manifest)));
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    err << "error_kind=" << e.kind() << '\n';
    return is_input_error(e.kind()) ? kExitInput : kExitEstimation;
  } catch (const json::exception& e) {
    err << "error: ConfigError: " << e.what() << '\n' << "error_kind=ConfigError\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << '\n' << "error_kind=IoError\n";
    return kExitInput;
  }
}

}  // namespace odml
