#pragma once

// Checkpoints are a libtorch archive of the network (`<stem>.pt`), an
// optional optimizer archive (`<stem>.optim.pt`) and a JSON sidecar
// (`<stem>.json`):
//
//   {
//     "format": "iagn-checkpoint",
//     "format_version": 1,
//     "weights_file": "best.pt",
//     "weights_sha1": "<git blob sha1 of weights_file>",
//     "optimizer_file": "best.optim.pt" | null,
//     "epoch": <int, -1 before any training>,
//     "seed": <uint>,
//     "config": { "model": {...}, "optim": {...}, "schedule": [...], "augment": {...} },
//     "class_names": [ ... ],
//     "metric_history": [ { "epoch": .., "learning_rate": .., "step_total": [..], "accuracy": {..} }, ... ]
//   }

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iagn/model.hpp"
#include "iagn/training.hpp"

namespace iagn::checkpoint {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

/// Git-style object id: sha1("blob <size>\0" + content), lowercase hex.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const fs::path& path);

nlohmann::json metrics_to_json(const training::EpochMetrics& m);

struct CheckpointInfo {
  int epoch = -1;
  std::vector<std::string> class_names;
  std::vector<training::EpochMetrics> history;
};

/// Writes <dir>/<stem>.pt, optionally <stem>.optim.pt, and <stem>.json.
/// Returns the sidecar path.
fs::path save(const fs::path& dir, const std::string& stem, model::IagnNet& net, torch::optim::Optimizer* optimizer,
              const training::TrainConfig& config, const CheckpointInfo& info);

struct Loaded {
  model::IagnNet net{nullptr};
  training::TrainConfig config;
  nlohmann::json sidecar;
  fs::path weights_path;
};

/// Accepts the sidecar (.json) or the weights file (.pt). Verifies the
/// weights hash. Throws ConfigError on a missing or inconsistent checkpoint.
Loaded load(const fs::path& path);

}  // namespace iagn::checkpoint
