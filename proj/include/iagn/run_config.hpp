#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iagn/training.hpp"

namespace iagn::config {

namespace fs = std::filesystem;

/// Everything a run needs, resolved before any compute:
///
///   { "data_dir": "...", "output_dir": "...", "profile": "desk",
///     "model": {...}, "optim": {...}, "schedule": [...], "augment": {...} }
struct RunConfig {
  std::string profile = "desk";
  std::string data_dir;
  std::string output_dir = "runs/latest";
  training::TrainConfig train;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a JSON config file. Missing keys keep their desk defaults.
nlohmann::json read_json_file(const fs::path& path);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
/// when possible and kept as a string otherwise. Unknown top-level sections
/// are rejected so typos surface as errors.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Parses a JSON document into a RunConfig, reporting the offending field in
/// the ConfigError message.
RunConfig resolve(const nlohmann::json& doc);

}  // namespace iagn::config
