#include "msemark/io.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "msemark/csv.hpp"
#include "msemark/errors.hpp"

#ifndef MSEMARK_VERSION
#define MSEMARK_VERSION "unknown"
#endif

namespace msemark {

const char* version_string() { return MSEMARK_VERSION; }

namespace {

const std::vector<std::string> kDrawColumns = {"iteration", "stratum", "m_g",     "observed_mark_sum",
                                               "n0",        "N",       "missed_mark_sum", "Y_tot",
                                               "d0",        "sum_x0",  "sum_x0_sq"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string log_or_na(double v) { return v > 0.0 ? csv::format_exact(std::log(v)) : std::string("NA"); }

}  // namespace

void write_draws_csv(std::ostream& out, const PosteriorDraws& draws) {
  csv::write_row(out, kDrawColumns);
  for (std::size_t d = 0; d < draws.num_draws(); ++d) {
    for (std::size_t g = 0; g < draws.num_strata(); ++g) {
      const std::size_t i = draws.at(d, g);
      csv::write_row(out, {std::to_string(draws.iterations[d]), draws.stratum_labels[g],
                           std::to_string(draws.observed_counts[g]), csv::format_exact(draws.observed_mark_sums[g]),
                           std::to_string(draws.n0[i]), std::to_string(draws.total_count(d, g)),
                           csv::format_exact(draws.missed_mark_sum[i]), csv::format_exact(draws.total_mark(d, g)),
                           csv::format_exact(draws.missed_mean_mark[i]), csv::format_exact(draws.sum_x0[i]),
                           csv::format_exact(draws.sum_x0_sq[i])});
    }
  }
}

PosteriorDraws read_draws_csv(std::istream& in) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw DataError("draws file is empty");
  if (header->fields != kDrawColumns) throw DataError("draws file has an unexpected header", header->line);

  auto integer = [](const csv::Row& row, std::size_t col) {
    const auto v = csv::parse_int(row.fields[col]);
    if (!v || *v < 0) throw DataError("column " + kDrawColumns[col] + " is not a non-negative integer", row.line);
    return *v;
  };
  auto real = [](const csv::Row& row, std::size_t col) {
    const auto v = csv::parse_double(row.fields[col]);
    if (!v) throw DataError("column " + kDrawColumns[col] + " is not a number", row.line);
    return *v;
  };

  std::vector<csv::Row> rows;
  while (auto row = reader.next()) {
    if (row->fields.size() != kDrawColumns.size())
      throw DataError("expected " + std::to_string(kDrawColumns.size()) + " fields, found " +
                          std::to_string(row->fields.size()) + " (file truncated?)",
                      row->line);
    if (reader.last_row_unterminated()) throw DataError("last row is not terminated (file truncated?)", row->line);
    rows.push_back(std::move(*row));
  }

  PosteriorDraws out;
  if (rows.empty()) return out;
  const auto first_iteration = integer(rows.front(), 0);
  for (const auto& row : rows) {
    if (integer(row, 0) != first_iteration) break;
    out.stratum_labels.push_back(row.fields[1]);
    out.observed_counts.push_back(integer(row, 2));
    out.observed_mark_sums.push_back(real(row, 3));
  }
  const std::size_t G = out.stratum_labels.size();
  if (rows.size() % G != 0) throw DataError("last draw is incomplete (file truncated?)", rows.back().line);

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t g = r % G;
    const auto iteration = static_cast<std::size_t>(integer(row, 0));
    if (g == 0) {
      if (!out.iterations.empty() && iteration <= out.iterations.back())
        throw DataError("iterations are not increasing", row.line);
      out.iterations.push_back(iteration);
    } else if (iteration != out.iterations.back()) {
      throw DataError("draw " + std::to_string(out.iterations.back()) + " is missing strata", row.line);
    }
    const auto m = integer(row, 2);
    if (row.fields[1] != out.stratum_labels[g] || m != out.observed_counts[g] ||
        real(row, 3) != out.observed_mark_sums[g])
      throw DataError("stratum rows are inconsistent across draws", row.line);
    const auto n0 = integer(row, 4);
    if (integer(row, 5) != m + n0) throw DataError("N differs from m_g + n0", row.line);
    const double missed = real(row, 6);
    if (!(missed >= 0.0)) throw DataError("negative missed mark total", row.line);
    out.n0.push_back(n0);
    out.missed_mark_sum.push_back(missed);
    real(row, 7);
    out.missed_mean_mark.push_back(real(row, 8));
    out.sum_x0.push_back(real(row, 9));
    out.sum_x0_sq.push_back(real(row, 10));
  }
  return out;
}

void write_trace_csv(std::ostream& out, const PosteriorDraws& draws, const MCMCSettings& settings) {
  csv::write_row(out, {"iteration", "retained", "missed_count", "log_missed_count", "missed_marks", "log_missed_marks"});
  for (std::size_t t = 0; t < draws.trace_missed_count.size(); ++t) {
    const double n = static_cast<double>(draws.trace_missed_count[t]);
    const double y = draws.trace_missed_marks[t];
    csv::write_row(out, {std::to_string(t + 1), settings.is_retained(t + 1) ? "1" : "0",
                         std::to_string(draws.trace_missed_count[t]), log_or_na(n), csv::format_exact(y),
                         log_or_na(y)});
  }
}

KeyValueFile KeyValueFile::parse(std::istream& in) {
  KeyValueFile out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(number) + ": empty key");
    if (!out.entries.emplace(key, Entry{value, number}).second)
      throw ConfigError("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
  }
  return out;
}

KeyValueFile KeyValueFile::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in);
}

void apply_config(KeyValueFile& file, ModelConfig& model, MCMCSettings& mcmc) {
  auto take = [&](const std::string& key, auto&& assign) {
    auto it = file.entries.find(key);
    if (it == file.entries.end()) return;
    const auto& [value, line] = it->second;
    auto fail = [&, line = line, value = value](const std::string& expected) {
      throw ConfigError("config line " + std::to_string(line) + ": " + key + " = '" + value + "' is not " +
                        expected);
    };
    assign(value, fail);
    file.entries.erase(it);
  };
  auto real = [&](const std::string& key, double& target) {
    take(key, [&](const std::string& v, auto fail) {
      const auto d = csv::parse_double(v);
      if (!d || !std::isfinite(*d)) fail("a finite number");
      target = *d;
    });
  };
  auto optional_real = [&](const std::string& key, std::optional<double>& target) {
    take(key, [&](const std::string& v, auto fail) {
      if (v == "auto") {
        target.reset();
        return;
      }
      const auto d = csv::parse_double(v);
      if (!d || !std::isfinite(*d)) fail("a finite number or auto");
      target = *d;
    });
  };
  auto count = [&](const std::string& key, auto& target) {
    take(key, [&](const std::string& v, auto fail) {
      const auto n = csv::parse_int(v);
      if (!n || *n < 0) fail("a non-negative integer");
      target = static_cast<std::remove_reference_t<decltype(target)>>(*n);
    });
  };
  auto flag = [&](const std::string& key, bool& target) {
    take(key, [&](const std::string& v, auto fail) {
      if (v == "true" || v == "1")
        target = true;
      else if (v == "false" || v == "0")
        target = false;
      else
        fail("true or false");
    });
  };

  count("K", model.K);
  real("a_p", model.a_p);
  real("b_p", model.b_p);
  real("c0", model.c0);
  real("C0", model.C0);
  optional_real("m0", model.m0);
  optional_real("s0_sq", model.s0_sq);
  take("alpha_prior", [&](const std::string& v, auto) { model.alpha_prior = AlphaPrior::parse(v); });
  real("a_lambda", model.a_lambda);
  real("b_lambda", model.b_lambda);
  flag("round_imputed_marks", model.round_imputed_marks);
  real("log_mark_clamp", model.log_mark_clamp);

  count("iterations", mcmc.iterations);
  count("burn_in", mcmc.burn_in);
  count("thin", mcmc.thin);
  take("seed", [&](const std::string& v, auto fail) {
    std::uint64_t s = 0;
    std::istringstream ss(v);
    if (!(ss >> s) || !ss.eof() || v.empty() || v[0] == '-') fail("an unsigned 64-bit integer");
    mcmc.seed = s;
  });
  real("target_acceptance", mcmc.target_acceptance);
  real("adapt_scale", mcmc.adapt_scale);
  real("adapt_decay", mcmc.adapt_decay);
  real("initial_log_tau", mcmc.initial_log_tau);
  flag("keep_snapshots", mcmc.keep_snapshots);
}

void reject_unknown_keys(const KeyValueFile& file) {
  if (file.entries.empty()) return;
  const auto& [key, entry] = *file.entries.begin();
  throw ConfigError("config line " + std::to_string(entry.line) + ": unknown key '" + key + "'");
}

std::string to_key_value(const ModelConfig& model, const MCMCSettings& mcmc) {
  std::ostringstream out;
  auto opt = [](const std::optional<double>& v) { return v ? csv::format_exact(*v) : std::string("auto"); };
  out << "K = " << model.K << "\n"
      << "a_p = " << csv::format_exact(model.a_p) << "\n"
      << "b_p = " << csv::format_exact(model.b_p) << "\n"
      << "c0 = " << csv::format_exact(model.c0) << "\n"
      << "C0 = " << csv::format_exact(model.C0) << "\n"
      << "m0 = " << opt(model.m0) << "\n"
      << "s0_sq = " << opt(model.s0_sq) << "\n"
      << "alpha_prior = " << model.alpha_prior.to_string() << "\n"
      << "a_lambda = " << csv::format_exact(model.a_lambda) << "\n"
      << "b_lambda = " << csv::format_exact(model.b_lambda) << "\n"
      << "round_imputed_marks = " << (model.round_imputed_marks ? "true" : "false") << "\n"
      << "log_mark_clamp = " << csv::format_exact(model.log_mark_clamp) << "\n"
      << "iterations = " << mcmc.iterations << "\n"
      << "burn_in = " << mcmc.burn_in << "\n"
      << "thin = " << mcmc.thin << "\n"
      << "seed = " << mcmc.seed << "\n"
      << "target_acceptance = " << csv::format_exact(mcmc.target_acceptance) << "\n"
      << "adapt_scale = " << csv::format_exact(mcmc.adapt_scale) << "\n"
      << "adapt_decay = " << csv::format_exact(mcmc.adapt_decay) << "\n"
      << "initial_log_tau = " << csv::format_exact(mcmc.initial_log_tau) << "\n"
      << "keep_snapshots = " << (mcmc.keep_snapshots ? "true" : "false") << "\n";
  return out.str();
}

nlohmann::json to_json(const ModelConfig& model) {
  nlohmann::json j;
  j["K"] = model.K;
  j["a_p"] = model.a_p;
  j["b_p"] = model.b_p;
  j["c0"] = model.c0;
  j["C0"] = model.C0;
  j["m0"] = model.m0 ? nlohmann::json(*model.m0) : nlohmann::json("auto");
  j["s0_sq"] = model.s0_sq ? nlohmann::json(*model.s0_sq) : nlohmann::json("auto");
  j["alpha_prior"] = model.alpha_prior.to_string();
  j["a_lambda"] = model.a_lambda;
  j["b_lambda"] = model.b_lambda;
  j["round_imputed_marks"] = model.round_imputed_marks;
  j["log_mark_clamp"] = model.log_mark_clamp;
  return j;
}

nlohmann::json to_json(const MCMCSettings& mcmc) {
  nlohmann::json j;
  j["iterations"] = mcmc.iterations;
  j["burn_in"] = mcmc.burn_in;
  j["thin"] = mcmc.thin;
  j["seed"] = mcmc.seed;
  j["retained"] = mcmc.retained();
  j["target_acceptance"] = mcmc.target_acceptance;
  j["adapt_scale"] = mcmc.adapt_scale;
  j["adapt_decay"] = mcmc.adapt_decay;
  j["initial_log_tau"] = mcmc.initial_log_tau;
  return j;
}

nlohmann::json chain_diagnostics(const PosteriorDraws& draws) {
  nlohmann::json j;
  j["retained_draws"] = draws.num_draws();
  j["clamp_events"] = draws.clamp_events;
  j["alpha_acceptance"] = draws.alpha_acceptance_rates();
  j["final_log_tau"] = draws.final_log_tau;
  j["strata"] = draws.stratum_labels;
  return j;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string() + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 initialisation failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["arguments"] = arguments;
  j["config"] = config;
  j["seed"] = seed;
  j["inputs"] = nlohmann::json::object();
  for (const auto& [path, digest] : input_digests) j["inputs"][path] = {{"sha256", digest}};
  j["version"] = version;
  j["started"] = started;
  j["finished"] = finished;
  j["outputs"] = outputs;
  return j;
}

}  // namespace msemark
