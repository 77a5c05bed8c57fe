#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wmfg/common.hpp"

namespace wmfg::cli {

/// Malformed run configuration; `field` is the dotted key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct RunConfig {
  std::string model = "additive";
  double x0 = 0.25;
  bool mean_field = false;
  std::optional<double> horizon;  // grid.T; defaults to the model's own horizon
  Index n_steps = 50;
  Index n_paths = 20000;
  std::uint64_t seed = 1;
  int degree = 2;
  double ridge = 0.0;
  double damping = 0.5;
  double tol = 1e-2;
  int max_iter = 50;
  std::vector<double> truncation;
  std::string output = "wmfg-out";
};

/// Parses JSON text. Unknown keys and out-of-range values raise ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

/// 64-bit FNV-1a of the given bytes.
std::uint64_t fnv1a(const std::string& bytes);

struct RunOptions {
  std::string subcommand;
  std::optional<std::string> config_path;
  std::optional<std::string> out_dir;
  int workers = 1;
  std::optional<std::uint64_t> seed;
};

/// Executes one subcommand and writes its artifacts. Returns 0 on verified
/// success, 2 when results are not verified or inconclusive, 1 on errors
/// (reported on `err` and in error.json when the output directory exists).
int run(const RunOptions& options, std::ostream& log, std::ostream& err);

const std::vector<std::string>& subcommands();

}  // namespace wmfg::cli
