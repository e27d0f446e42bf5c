// msemark: command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numerical or domain failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "msemark/analytics.hpp"
#include "msemark/baselines.hpp"
#include "msemark/csv.hpp"
#include "msemark/dataset.hpp"
#include "msemark/errors.hpp"
#include "msemark/experiments.hpp"
#include "msemark/io.hpp"
#include "msemark/latent_class.hpp"

namespace fs = std::filesystem;
using namespace msemark;

namespace {

bool quiet = false;

void log(const std::string& msg) {
  if (!quiet) std::cerr << "msemark: " << msg << "\n";
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int report_error(const char* kind, int code, const std::string& msg) {
  std::cerr << "msemark: error kind=" << kind << " code=" << code << " message=" << one_line(msg) << "\n";
  return code;
}

struct DataOptions {
  std::string data;
  std::string stratify = "single";
  std::string collapse;
  std::string mark_column = "y";
  std::string id_column = "id";
  std::string lists;
  bool strict = false;
};

void add_data_options(CLI::App* cmd, DataOptions& o, bool required) {
  auto* opt = cmd->add_option("--data", o.data, "Incident CSV (id,date,[stratum],y,<list indicators>)");
  if (required) opt->required();
  cmd->add_option("--stratify", o.stratify, "single, year, month or file (use the stratum column)")
      ->capture_default_str();
  cmd->add_option("--collapse", o.collapse, "Merge lists, e.g. 1+3,2,4");
  cmd->add_option("--mark-column", o.mark_column, "Mark column name")->capture_default_str();
  cmd->add_option("--id-column", o.id_column, "Identifier column name")->capture_default_str();
  cmd->add_option("--lists", o.lists, "Comma-separated list columns (default: all remaining columns)");
  cmd->add_flag("--strict", o.strict, "Abort on the first rejected row");
}

struct Loaded {
  Dataset data;
  std::vector<RowError> rejected;
};

Loaded load_dataset(const DataOptions& o) {
  CsvSchema schema;
  schema.mark_column = o.mark_column;
  schema.id_column = o.id_column;
  schema.strict = o.strict;
  if (!o.lists.empty()) {
    std::stringstream ss(o.lists);
    std::string item;
    while (std::getline(ss, item, ',')) schema.list_columns.push_back(item);
  }
  auto parsed = read_incident_csv(o.data, schema);
  for (const auto& e : parsed.rejected) log("rejected line " + std::to_string(e.line) + ": " + e.message);
  Dataset d = std::move(parsed.dataset);
  if (!o.collapse.empty()) d = collapse_lists(d, parse_list_groups(o.collapse));
  if (o.stratify != "file") d = stratify(d, parse_stratify_scheme(o.stratify));
  return {std::move(d), std::move(parsed.rejected)};
}

struct ModelOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> burn_in;
  std::optional<std::size_t> thin;
  std::optional<std::size_t> K;
};

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--config", o.config, "key = value file with model and sampler settings");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--iterations", o.iterations, "Total sweeps");
  cmd->add_option("--burn-in", o.burn_in, "Discarded sweeps");
  cmd->add_option("--thin", o.thin, "Keep every thin-th sweep after burn-in");
  cmd->add_option("-K,--clusters", o.K, "Number of latent clusters");
}

void resolve(const ModelOptions& o, ModelConfig& model, MCMCSettings& mcmc) {
  if (!o.config.empty()) {
    auto file = KeyValueFile::read(o.config);
    apply_config(file, model, mcmc);
    reject_unknown_keys(file);
  }
  if (o.seed) mcmc.seed = *o.seed;
  if (o.iterations) mcmc.iterations = *o.iterations;
  if (o.burn_in) mcmc.burn_in = *o.burn_in;
  if (o.thin) mcmc.thin = *o.thin;
  if (o.K) model.K = *o.K;
  model.validate();
  mcmc.validate();
}

/// Collects outputs and writes the manifest last.
class Run {
 public:
  Run(std::string command, int argc, char** argv, const std::string& out)
      : dir_(out.empty() ? default_out() : fs::path(out)) {
    manifest_.command = std::move(command);
    for (int i = 1; i < argc; ++i) manifest_.arguments.emplace_back(argv[i]);
    manifest_.started = utc_timestamp();
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  void input(const std::string& path) {
    if (!path.empty()) manifest_.input_digests[path] = sha256_file(path);
  }
  void config(nlohmann::json j, std::uint64_t seed) {
    manifest_.config = std::move(j);
    manifest_.seed = seed;
  }

  template <class Fn>
  void write(const std::string& name, Fn&& fn) {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    fn(out);
    out.close();
    if (!out) throw ConfigError("failed writing " + path.string());
    manifest_.outputs.push_back(name);
  }

  void finish() {
    manifest_.finished = utc_timestamp();
    manifest_.outputs.push_back("manifest.json");
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    out << manifest_.to_json().dump(2) << "\n";
    log("wrote " + std::to_string(manifest_.outputs.size()) + " files to " + dir_.string());
  }

 private:
  static fs::path default_out() {
    if (const char* env = std::getenv("MSEMARK_OUT"); env && *env) return env;
    throw ConfigError("no output directory: pass --out or set MSEMARK_OUT");
  }

  fs::path dir_;
  RunManifest manifest_;
};

nlohmann::json summary_json(const std::vector<SummaryRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"stratum", r.stratum}, {"functional", r.functional}, {"median", r.median},
                        {"q025", r.lower},      {"q975", r.upper}};
    j["observed"] = r.observed_bound ? nlohmann::json(*r.observed_bound) : nlohmann::json(nullptr);
    arr.push_back(j);
  }
  return arr;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

int cmd_fit(int argc, char** argv, const DataOptions& data_opts, const ModelOptions& model_opts,
            const std::string& out, bool snapshots, const std::string& weighting, double curve_max) {
  ModelConfig model;
  MCMCSettings mcmc;
  resolve(model_opts, model, mcmc);
  mcmc.keep_snapshots = snapshots;
  const auto weights = parse_stratum_weighting(weighting);
  if (!(curve_max >= 1.0)) throw ConfigError("--curve-max must be at least 1");

  Run run("fit", argc, argv, out);
  run.input(data_opts.data);
  run.input(model_opts.config);
  auto loaded = load_dataset(data_opts);
  const Dataset& d = loaded.data;
  if (d.empty()) throw DataError("no valid incidents in " + data_opts.data);
  log("fitting " + std::to_string(d.size()) + " incidents, " + std::to_string(d.num_lists()) + " lists, " +
      std::to_string(d.num_strata()) + " strata");

  nlohmann::json config = {{"model", to_json(model)}, {"mcmc", to_json(mcmc)},     {"stratify", data_opts.stratify},
                           {"collapse", data_opts.collapse}, {"weighting", weighting}};
  run.config(config, mcmc.seed);

  const auto draws = run_chain(d, model, mcmc);
  const auto totals = summarize_totals(draws);
  const auto missed_mean = expected_missing_mark(draws);
  const auto corr = augmented_correlation(draws, d);

  run.write("config.txt", [&](std::ostream& o) { o << to_key_value(model, mcmc); });
  run.write("patterns.csv", [&](std::ostream& o) { write_pattern_table_csv(o, pattern_table(d), d.list_names()); });
  if (!loaded.rejected.empty())
    run.write("rejected_rows.csv", [&](std::ostream& o) {
      csv::write_row(o, {"line", "message"});
      for (const auto& e : loaded.rejected) csv::write_row(o, {std::to_string(e.line), e.message});
    });
  run.write("draws.csv", [&](std::ostream& o) { write_draws_csv(o, draws); });
  run.write("trace.csv", [&](std::ostream& o) { write_trace_csv(o, draws, mcmc); });
  run.write("summary.csv", [&](std::ostream& o) { write_summary_csv(o, totals); });
  run.write("missed_mean_mark.csv", [&](std::ostream& o) { write_missed_mean_mark_csv(o, missed_mean); });
  run.write("correlation.csv", [&](std::ostream& o) { write_correlation_csv(o, corr); });

  nlohmann::json report;
  report["version"] = version_string();
  report["config"] = config;
  report["data"] = {{"incidents", d.size()},
                    {"lists", d.list_names()},
                    {"strata", d.stratum_labels()},
                    {"observed_marks", d.total_mark()},
                    {"rejected_rows", loaded.rejected.size()}};
  report["diagnostics"] = chain_diagnostics(draws);
  report["totals"] = summary_json(totals);
  auto mm = nlohmann::json::array();
  for (const auto& r : missed_mean)
    mm.push_back({{"stratum", r.stratum},
                  {"available", r.available},
                  {"median", finite_or_null(r.median)},
                  {"q025", finite_or_null(r.lower)},
                  {"q975", finite_or_null(r.upper)},
                  {"excluded_fraction", r.excluded_fraction},
                  {"observed_mean", finite_or_null(r.observed_mean)}});
  report["missed_mean_mark"] = mm;

  if (snapshots) {
    const auto by_stratum = reporting_prob_by_stratum(draws);
    const auto grid = log_grid(1.0, curve_max, 40);
    const auto curve = reporting_prob_given_mark(draws, grid, weights);
    run.write("reporting_by_stratum.csv", [&](std::ostream& o) { write_summary_csv(o, by_stratum); });
    run.write("reporting_curve.csv", [&](std::ostream& o) { write_curve_csv(o, curve); });
    report["reporting_by_stratum"] = summary_json(by_stratum);
  }
  run.write("report.json", [&](std::ostream& o) { o << report.dump(2) << "\n"; });

  for (const auto& r : totals)
    if (r.stratum == "all" || d.num_strata() == 1)
      log(r.functional + " (" + r.stratum + "): median " + csv::format(r.median) + " [" + csv::format(r.lower) +
          ", " + csv::format(r.upper) + "]");
  if (draws.clamp_events > 0) log(std::to_string(draws.clamp_events) + " imputed log-marks were clamped");
  run.finish();
  return 0;
}

int cmd_simulate(int argc, char** argv, const std::string& settings, const std::string& methods,
                 std::optional<std::size_t> replicates, const std::string& preset, const ModelOptions& model_opts,
                 std::size_t jobs, const std::string& out) {
  const auto p = StudyPreset::by_name(preset);
  StudyOptions opts;
  opts.mcmc = p.mcmc;
  resolve(model_opts, opts.model, opts.mcmc);
  opts.replicates = replicates.value_or(p.replicates);
  opts.methods = parse_methods(methods);
  std::stringstream ss(settings);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) opts.settings.push_back(DGPSpec::by_name(item));
  if (opts.settings.empty()) throw ConfigError("no simulation settings given");
  opts.jobs = jobs;
  const std::size_t total = opts.settings.size() * opts.replicates;
  std::size_t done = 0;
  opts.progress = [&](const std::string& s, std::size_t r) {
    ++done;
    log("setting " + s + " replicate " + std::to_string(r + 1) + " done (" + std::to_string(done) + "/" +
        std::to_string(total) + ")");
  };

  Run run("simulate", argc, argv, out);
  run.input(model_opts.config);
  run.config({{"model", to_json(opts.model)},
              {"mcmc", to_json(opts.mcmc)},
              {"settings", settings},
              {"methods", methods},
              {"replicates", opts.replicates},
              {"preset", preset}},
             opts.mcmc.seed);
  const auto result = run_replication_study(opts);
  if (result.failed_replicates > 0) log(std::to_string(result.failed_replicates) + " replicates failed");
  run.write("replicates.csv", [&](std::ostream& o) { write_replicates_csv(o, result); });
  run.write("aggregate.csv", [&](std::ostream& o) { write_aggregate_csv(o, result); });
  run.write("coverage.csv", [&](std::ostream& o) { write_coverage_csv(o, result); });
  run.finish();
  return 0;
}

int cmd_sensitivity(int argc, char** argv, const DataOptions& data_opts, const ModelOptions& model_opts,
                    const std::string& grid_name, std::size_t jobs, const std::string& out) {
  ModelConfig model;
  MCMCSettings mcmc;
  resolve(model_opts, model, mcmc);
  std::vector<PriorGridEntry> grid;
  if (grid_name == "full")
    grid = prior_grid();
  else if (grid_name == "baseline-only")
    grid = baseline_grid();
  else
    throw ConfigError("unknown grid '" + grid_name + "' (expected full or baseline-only)");

  Run run("sensitivity", argc, argv, out);
  run.input(data_opts.data);
  run.input(model_opts.config);
  auto loaded = load_dataset(data_opts);
  if (loaded.data.empty()) throw DataError("no valid incidents in " + data_opts.data);
  run.config({{"model", to_json(model)}, {"mcmc", to_json(mcmc)}, {"grid", grid_name}}, mcmc.seed);
  log("running " + std::to_string(grid.size()) + " prior configurations");
  const auto rows = run_sensitivity(loaded.data, grid, model, mcmc, jobs);
  std::size_t failed = 0;
  for (const auto& r : rows)
    if (!r.ok) ++failed;
  if (failed) log(std::to_string(failed) + " configurations failed");
  run.write("sensitivity.csv", [&](std::ostream& o) { write_sensitivity_csv(o, rows); });
  run.finish();
  return 0;
}

PosteriorDraws load_draws(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open draws file " + path);
  return read_draws_csv(in);
}

int cmd_mortality(int argc, char** argv, const std::string& draws_path, const std::string& arrivals_path,
                  const std::string& rho_text, std::size_t samples, std::uint64_t seed, std::size_t bins,
                  const std::string& out) {
  const auto rho = RhoSpec::parse(rho_text);
  Run run("mortality", argc, argv, out);
  run.input(draws_path);
  run.input(arrivals_path);
  run.config({{"rho", rho.to_string()}, {"samples", samples}, {"bins", bins}}, seed);
  const auto draws = load_draws(draws_path);
  if (draws.num_draws() == 0) throw DataError("draws file has no draws");
  std::ifstream ain(arrivals_path, std::ios::binary);
  if (!ain) throw ConfigError("cannot open arrivals file " + arrivals_path);
  const auto arrivals = align_arrivals(read_arrivals_csv(ain), draws.stratum_labels);
  RandomStream rng(seed);
  const auto result = mortality_rate_mc(MortalityInputs::from_draws(draws, arrivals), rho, samples, rng);
  run.write("mortality.csv", [&](std::ostream& o) { write_mortality_csv(o, result); });
  run.write("mortality_density.csv", [&](std::ostream& o) {
    csv::write_row(o, {"series", "bin_lower", "bin_upper", "density"});
    for (const auto& [name, values] : result.samples) {
      std::vector<double> finite;
      for (double v : values)
        if (std::isfinite(v)) finite.push_back(v);
      if (finite.empty()) continue;
      const auto h = histogram(finite, bins);
      for (std::size_t b = 0; b < h.density.size(); ++b)
        csv::write_row(o, {name, csv::format(h.lo + static_cast<double>(b) * h.width),
                           csv::format(h.lo + static_cast<double>(b + 1) * h.width), csv::format(h.density[b])});
    }
  });
  run.finish();
  return 0;
}

int cmd_summarize(int argc, char** argv, const std::string& draws_path, const DataOptions& data_opts,
                  const std::string& out) {
  Run run("summarize", argc, argv, out);
  run.input(draws_path);
  run.config({{"draws", draws_path}}, 0);
  const auto draws = load_draws(draws_path);
  run.write("summary.csv", [&](std::ostream& o) { write_summary_csv(o, summarize_totals(draws)); });
  run.write("missed_mean_mark.csv",
            [&](std::ostream& o) { write_missed_mean_mark_csv(o, expected_missing_mark(draws)); });
  if (!data_opts.data.empty()) {
    run.input(data_opts.data);
    const auto loaded = load_dataset(data_opts);
    run.write("correlation.csv",
              [&](std::ostream& o) { write_correlation_csv(o, augmented_correlation(draws, loaded.data)); });
  }
  run.finish();
  return 0;
}

int cmd_patterns(int argc, char** argv, const DataOptions& data_opts, const std::string& out) {
  Run run("patterns", argc, argv, out);
  run.input(data_opts.data);
  run.config({{"collapse", data_opts.collapse}, {"stratify", data_opts.stratify}}, 0);
  const auto loaded = load_dataset(data_opts);
  const auto table = pattern_table(loaded.data);
  run.write("patterns.csv", [&](std::ostream& o) { write_pattern_table_csv(o, table, loaded.data.list_names()); });
  const auto chao = chao_estimate(loaded.data);
  log(std::to_string(table.total()) + " incidents in " + std::to_string(table.counts.size()) + " patterns");
  if (chao.n0) log("Chao lower bound on missed incidents: " + csv::format(*chao.n0));
  run.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mark-augmented multiple-systems estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", version_string());
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  std::string out;
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());

  DataOptions fit_data;
  ModelOptions fit_model;
  bool no_snapshots = false;
  std::string weighting = "lambda";
  double curve_max = 1000.0;
  auto* fit = app.add_subcommand("fit", "Run the latent-class sampler on an incident file");
  add_data_options(fit, fit_data, true);
  add_model_options(fit, fit_model);
  fit->add_option("--out", out, "Output directory (default: $MSEMARK_OUT)");
  fit->add_flag("--no-snapshots", no_snapshots, "Skip parameter snapshots and reporting-probability outputs");
  fit->add_option("--weighting", weighting, "Cross-stratum weights for the reporting curve: lambda, equal, observed")
      ->capture_default_str();
  fit->add_option("--curve-max", curve_max, "Largest mark on the reporting-curve grid")->capture_default_str();

  std::string settings = "A,B,C";
  std::string methods = "all";
  std::optional<std::size_t> replicates;
  std::string preset = "desk";
  std::size_t jobs = hw;
  ModelOptions sim_model;
  auto* sim = app.add_subcommand("simulate", "Run the simulation study");
  sim->add_option("--settings", settings, "Comma-separated settings (A, B, C)")->capture_default_str();
  sim->add_option("--methods", methods, "Comma-separated methods or all")->capture_default_str();
  sim->add_option("--replicates", replicates, "Replicates per setting (default from preset)");
  sim->add_option("--preset", preset, "desk or paper")->capture_default_str();
  sim->add_option("--jobs", jobs, "Worker threads")->capture_default_str();
  add_model_options(sim, sim_model);
  sim->add_option("--out", out, "Output directory (default: $MSEMARK_OUT)");

  DataOptions sens_data;
  ModelOptions sens_model;
  std::string grid = "full";
  auto* sens = app.add_subcommand("sensitivity", "Refit under the prior grid");
  add_data_options(sens, sens_data, true);
  add_model_options(sens, sens_model);
  sens->add_option("--grid", grid, "full or baseline-only")->capture_default_str();
  sens->add_option("--jobs", jobs, "Worker threads")->capture_default_str();
  sens->add_option("--out", out, "Output directory (default: $MSEMARK_OUT)");

  std::string draws_path, arrivals_path, rho_text = "beta:1.3,2.8";
  std::size_t samples = 250000, bins = 50;
  std::uint64_t mort_seed = 20140217;
  auto* mort = app.add_subcommand("mortality", "Mortality-rate Monte Carlo from fitted draws");
  mort->add_option("--draws", draws_path, "draws.csv from fit")->required();
  mort->add_option("--arrivals", arrivals_path, "CSV of stratum,arrivals")->required();
  mort->add_option("--rho", rho_text, "uniform, beta:a,b or grid:v1,v2,...")->capture_default_str();
  mort->add_option("--samples", samples, "Monte Carlo samples")->capture_default_str();
  mort->add_option("--bins", bins, "Histogram bins for densities")->capture_default_str();
  mort->add_option("--seed", mort_seed, "Seed")->capture_default_str();
  mort->add_option("--out", out, "Output directory (default: $MSEMARK_OUT)");

  DataOptions sum_data;
  std::string sum_draws;
  auto* summ = app.add_subcommand("summarize", "Summarize an existing draws file");
  summ->add_option("--draws", sum_draws, "draws.csv from fit")->required();
  add_data_options(summ, sum_data, false);
  summ->add_option("--out", out, "Output directory (default: $MSEMARK_OUT)");

  DataOptions pat_data;
  auto* pat = app.add_subcommand("patterns", "Tabulate capture patterns");
  add_data_options(pat, pat_data, true);
  pat->add_option("--out", out, "Output directory (default: $MSEMARK_OUT)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    return report_error("config", 2, e.what());
  }

  try {
    if (*fit) return cmd_fit(argc, argv, fit_data, fit_model, out, !no_snapshots, weighting, curve_max);
    if (*sim) return cmd_simulate(argc, argv, settings, methods, replicates, preset, sim_model, jobs, out);
    if (*sens) return cmd_sensitivity(argc, argv, sens_data, sens_model, grid, jobs, out);
    if (*mort) return cmd_mortality(argc, argv, draws_path, arrivals_path, rho_text, samples, mort_seed, bins, out);
    if (*summ) return cmd_summarize(argc, argv, sum_draws, sum_data, out);
    if (*pat) return cmd_patterns(argc, argv, pat_data, out);
  } catch (const ConfigError& e) {
    return report_error("config", 2, e.what());
  } catch (const DataError& e) {
    return report_error("data", 3, e.what());
  } catch (const NumericalError& e) {
    return report_error("numerical", 4, e.what());
  } catch (const DomainError& e) {
    return report_error("domain", 4, e.what());
  } catch (const std::exception& e) {
    return report_error("internal", 1, e.what());
  }
  return 0;
}
