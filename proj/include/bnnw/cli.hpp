#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>

#include "config.hpp"
#include "pipeline.hpp"
#include "simlab.hpp"

namespace bnnw {

struct CliOptions {
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out = ".";
  std::optional<std::size_t> workers;
};

/// Exit status when a fold fell back to unit calibration weights and the config did not allow it.
inline constexpr int kExitFallback = 3;

/// Throws on keys outside the documented schema.
void check_known_keys(const Config& cfg);

RunConfig run_config_from(const Config& cfg);
StudyConfig study_config_from(const Config& cfg);
CsvSchema csv_schema_from(const Config& cfg);

int cmd_simulate(const CliOptions& opts);
int cmd_fit(const CliOptions& opts);
int cmd_curve(const CliOptions& opts);
int cmd_study(const CliOptions& opts);

/// Parses argv and dispatches; returns the process exit status.
int run_cli(int argc, char** argv);

}  // namespace bnnw
