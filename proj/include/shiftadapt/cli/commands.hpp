#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace shiftadapt::cli {

/// The bundled run-configuration schema.
const nlohmann::json& run_config_schema();

/// A validated run configuration; relative paths resolve against `base_dir`.
struct RunConfig {
  nlohmann::json raw;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& path) const;
};

/// Parses and validates; throws cli.config_invalid before any other work.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const nlohmann::json& raw, const std::filesystem::path& base_dir);

struct CommandOptions {
  /// Overrides the configured output directory (SHIFTADAPT_OUTPUT_DIR too).
  std::optional<std::filesystem::path> output_dir;
  /// Worker cap; 0 uses SHIFTADAPT_JOBS, then the config, then all cores.
  std::size_t jobs = 0;
  /// "grid", "theory" or a fixed value in [0, 1].
  std::optional<std::string> alpha;
  /// Keeps only candidates of this kind ("ensemble" adds a default stack).
  std::optional<std::string> model;
};

inline const std::vector<std::string> kCommands = {"synth",    "preprocess", "mmd",    "train", "adapt",
                                                   "evaluate", "secondary",  "bounds", "report"};

/// Runs one command; returns the written artifact paths (manifest last).
std::vector<std::filesystem::path> run_command(const std::string& command, const RunConfig& config,
                                               const CommandOptions& options);

/// Entry point of the command-line tool. Returns the process exit status.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace shiftadapt::cli
