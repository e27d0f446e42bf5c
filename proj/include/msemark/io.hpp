#pragma once

// Files a run reads and writes: retained draws, chain traces, flat
// key = value configuration, run metadata and the run manifest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "msemark/latent_class.hpp"

namespace msemark {

const char* version_string();

/// One row per (retained draw, stratum). Values are written so they
/// round-trip exactly.
void write_draws_csv(std::ostream& out, const PosteriorDraws& draws);
/// Throws DataError on a malformed or truncated file.
PosteriorDraws read_draws_csv(std::istream& in);

/// Pooled missed count and missed mark total after every sweep, with logs.
void write_trace_csv(std::ostream& out, const PosteriorDraws& draws, const MCMCSettings& settings);

/// `key = value` lines; `#` starts a comment. Keys keep their source line.
struct KeyValueFile {
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::map<std::string, Entry> entries;

  static KeyValueFile parse(std::istream& in);
  static KeyValueFile read(const std::filesystem::path& path);
};

/// Applies model and sampler keys, removing them from `file`. Unknown keys
/// are left for the caller.
void apply_config(KeyValueFile& file, ModelConfig& model, MCMCSettings& mcmc);
/// Throws ConfigError naming the first key still present.
void reject_unknown_keys(const KeyValueFile& file);
/// Every model and sampler key with its resolved value; parses back to the same settings.
std::string to_key_value(const ModelConfig& model, const MCMCSettings& mcmc);

nlohmann::json to_json(const ModelConfig& model);
nlohmann::json to_json(const MCMCSettings& mcmc);
nlohmann::json chain_diagnostics(const PosteriorDraws& draws);

std::string sha256_file(const std::filesystem::path& path);
std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now());

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::string version = version_string();
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;  // relative to the output directory

  nlohmann::json to_json() const;
};

}  // namespace msemark
