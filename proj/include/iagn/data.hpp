#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "iagn/patch_shuffle.hpp"

namespace iagn::data {

namespace fs = std::filesystem;

struct Sample {
  fs::path path;
  int64_t label = 0;
};

/// Class-per-folder dataset: <root>/{train,test}/<class>/<image>.
struct DatasetManifest {
  fs::path root;
  std::vector<std::string> classes;  // sorted; index is the label
  std::vector<Sample> train;
  std::vector<Sample> test;
  int skipped = 0;  // files no image decoder recognises

  int64_t num_classes() const { return static_cast<int64_t>(classes.size()); }
};

/// Throws ConfigError for a missing root/split, an empty class directory or
/// different class sets in train/ and test/.
DatasetManifest load_manifest(const fs::path& root);

struct AugmentPolicy {
  int resize = 72;
  int crop = 64;
  double flip_prob = 0.5;
  double max_rotation_deg = 15.0;
  // Tests pin the flip decision; otherwise it is drawn with flip_prob.
  std::optional<bool> force_flip;

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentPolicy& p);
void from_json(const nlohmann::json& j, AugmentPolicy& p);

/// Training: resize -> random crop -> random horizontal flip -> random
/// rotation (border replicated). Evaluation: resize -> center crop.
/// Upscaling a source smaller than the resize target logs a warning.
cv::Mat standard_augment(const cv::Mat& image, bool training, Rng& rng, const AugmentPolicy& policy);

cv::Mat read_image(const fs::path& path);  // BGR 8-bit; empty Mat on failure

/// BGR uint8 HxWx3 -> RGB float (3, H, W), scaled to roughly [-1, 1].
torch::Tensor image_to_tensor(const cv::Mat& bgr);
/// uint8 (C, H, W) tensor <-> BGR Mat, pixel exact.
torch::Tensor mat_to_chw_u8(const cv::Mat& bgr);
cv::Mat chw_u8_to_mat(const torch::Tensor& chw);

struct Box {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const Box&) const = default;
};

/// Where a source-image box lands after the evaluation transform.
Box map_box_eval(const Box& box, int src_width, int src_height, const AugmentPolicy& policy);

// ---------------------------------------------------------------- synthetic

struct SyntheticSpec {
  int num_classes = 4;
  int image_size = 64;
  int motif_size = 8;
  int train_per_class = 100;
  int test_per_class = 50;
  int noise = 8;  // per-pixel uniform integer noise amplitude
  uint64_t seed = 7;

  /// Throws ConfigError unless motif_size < image_size / 4 and counts are sane.
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

std::string synthetic_class_name(int index);

/// Shared global structure: textured background plus a large central shape.
cv::Mat render_template(const SyntheticSpec& spec);
/// The class-specific motif (motif_size x motif_size, BGR), mirror-symmetric.
cv::Mat render_motif(const SyntheticSpec& spec, int class_index);

struct SyntheticImage {
  cv::Mat image;
  Box motif_box;
};

/// One sample: template, motif stamped at a uniform location, then noise.
SyntheticImage render_sample(const SyntheticSpec& spec, int class_index, Rng& rng);

struct SyntheticDataset {
  DatasetManifest manifest;
  std::map<std::string, Box> motif_boxes;  // keyed by path relative to root
};

/// Writes the dataset plus annotations.json (spec + motif boxes) under `out`.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, const fs::path& out);

/// Reads annotations.json written by generate_synthetic; empty if absent.
std::map<std::string, Box> load_motif_boxes(const fs::path& root);

// ---------------------------------------------------------------- in-memory

/// Decoded images for one split, kept in memory between epochs.
struct ImageSet {
  std::vector<cv::Mat> images;
  std::vector<int64_t> labels;
  std::vector<fs::path> paths;
  int skipped = 0;

  std::size_t size() const { return images.size(); }
};

ImageSet load_split(const std::vector<Sample>& samples);

/// Evaluation transform for a list of indices into `set`, stacked to (B,3,H,W).
torch::Tensor eval_batch(const ImageSet& set, const std::vector<std::size_t>& indices, const AugmentPolicy& policy);

}  // namespace iagn::data
