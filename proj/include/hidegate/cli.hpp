#pragma once

// Command-line driver: JSON run configs with dotted-flag overrides and the
// sample / attack / evaluate / analyze commands.

#include <string>
#include <vector>

#include <json.hpp>

#include "hidegate/clusterlab.hpp"
#include "hidegate/error.hpp"

namespace hidegate::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  exit_ok = 0,
  exit_config = 2,
  exit_external = 3,
  exit_internal = 4,
};

int exit_code_for(ErrorKind kind) noexcept;

// Every accepted key with its default; doubles as the schema.
nlohmann::json default_config();

// Overlays `overlay` onto `base`, rejecting keys absent from `base` and
// values whose type differs from the default's.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& prefix = "");

// `dotted` is a key path such as "attack.m"; value is parsed according to
// the type of the default at that path.
void apply_override(nlohmann::json& config, const std::string& dotted, const std::string& value);

// Each command reads its own section plus the shared ones and writes into
// config["out_dir"]. They throw hidegate::Error on failure.
void cmd_sample(const nlohmann::json& config);
void cmd_attack(const nlohmann::json& config);
void cmd_evaluate(const nlohmann::json& config);
void cmd_analyze(const nlohmann::json& config);

// Runs a command by name, logging failures and mapping them to exit codes.
int run_command(const std::string& name, const nlohmann::json& config);

std::vector<PrecisionReport> read_precision_reports(const std::string& path);

int main(int argc, char** argv);

}  // namespace hidegate::cli
