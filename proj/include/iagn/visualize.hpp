#pragma once

#include <array>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "iagn/data.hpp"
#include "iagn/model.hpp"

namespace iagn::viz {

/// Per-map min-max normalisation to [0, 1]; a zero-range map becomes zeros.
torch::Tensor normalize_heatmap(const torch::Tensor& map);

/// Bilinear upsampling of a (u, v) map to (height, width), clamped to [0, 1].
torch::Tensor upsample_heatmap(const torch::Tensor& map, int64_t height, int64_t width);

cv::Mat heatmap_to_gray(const torch::Tensor& heatmap);

/// Jet-coloured heatmap blended onto the image with weight `alpha`.
cv::Mat overlay(const cv::Mat& bgr, const torch::Tensor& heatmap, double alpha = 0.5);

/// Fraction of total heatmap mass inside `box`; 0 for an all-zero map.
double attention_mass(const torch::Tensor& heatmap, const data::Box& box);

/// JSON arrays of a 2-D tensor, row-major.
nlohmann::json map_to_json(const torch::Tensor& map);

struct HeatmapArtifact {
  cv::Mat input;                        // evaluation-transformed image
  std::array<torch::Tensor, 3> heatmaps;  // s3, s4, s5; input-sized, in [0, 1]
  std::array<cv::Mat, 3> overlays;
  int64_t predicted_class = 0;
  nlohmann::json logits;                // per head plus combined
};

/// Runs evaluation-time inference on one decoded image and builds the three
/// stage heatmaps.
HeatmapArtifact make_artifact(model::IagnNet& net, const cv::Mat& image, const data::AugmentPolicy& policy);

}  // namespace iagn::viz
