#pragma once

// The gmn command line: ingestion, training, evaluation, classification,
// sampling and diagnostics, each writing its outputs plus a manifest into a
// run directory.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gmn/train.hpp"

namespace gmn {

enum ExitCode {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitData = 4,
  kExitCheckpoint = 5,
  kExitNumeric = 6,
};

int run_cli(int argc, const char* const* argv);

// Preset ("paper", "reduced", "tiny") then file keys then nothing else;
// unknown keys are a ConfigError.
TrainConfig resolve_train_config(const nlohmann::json& file, const std::string& preset);
TrainConfig load_train_config(const std::filesystem::path& path);

// SHA-1 of "blob <size>\0<content>", as git hashes file contents.
std::string git_blob_hash(const std::filesystem::path& path);

}  // namespace gmn
