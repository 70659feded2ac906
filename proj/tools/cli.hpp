#pragma once

// `elegant` command-line driver, callable in-process for tests.
//
// Subcommands: generate, eval-open, eval-closed, stats, penalty-curve,
// vqa-prompt. Settings resolve as flags > --config file > environment >
// defaults. Tokens come only from ELEGANT_<ROLE>_TOKEN.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "elegant/wire.hpp"
#include "json.hpp"

namespace elegant::cli {

enum ExitCode : int { ok = 0, usage = 1, validation = 2, backend = 3, io = 4 };

using Env = std::map<std::string, std::string>;

struct CliConfig {
  std::string mode = "open";  // open | closed:<vocab> | gt-boxes
  std::optional<std::string> vocab;
  std::vector<double> alphas{0.01};
  std::vector<std::size_t> ks{10, 20, 50};
  std::size_t parallelism = 4;
  bool coca = true;
  std::string calibration_route = "thinker";
  std::string aggregation = "per_local";
  std::string match = "gt-boxes";
  double iou_threshold = 0.5;
  std::map<backends::Role, backends::BackendConfig> backends;
  std::optional<std::string> mock_fixtures;
  bool mock_lenient = false;
  std::optional<std::string> record_fixtures;
  std::optional<std::string> prompts_dir;
  std::optional<std::string> out_dir;
};

/// The resolved config as persisted with a run. Token values are never
/// included; only whether one was supplied.
nlohmann::json to_json(const CliConfig& config);

Env environment_from(char** envp);

int run_cli(const std::vector<std::string>& argv, const Env& env, std::ostream& out,
            std::ostream& err);
int run_cli(const std::vector<std::string>& argv, const Env& env);

}  // namespace elegant::cli
