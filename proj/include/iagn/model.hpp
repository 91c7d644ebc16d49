#pragma once

// Staged classifier with interpretable-attention blocks on the last three
// stages, one prediction head per instrumented stage and a head over the
// concatenated pooled stage features.

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "iagn/ia_block.hpp"

namespace iagn::model {

enum class Head { kS3 = 0, kS4 = 1, kS5 = 2, kConcat = 3 };

inline constexpr std::array<Head, 4> kAllHeads = {Head::kS3, Head::kS4, Head::kS5, Head::kConcat};
inline constexpr int kInstrumentedStages = 3;

std::string_view head_name(Head head);
/// Accepts "s3", "s4", "s5", "concat". Throws SpecError otherwise.
Head parse_head(std::string_view name);

struct BackboneConfig {
  std::string kind = "desk";  // "desk" or "resnet50"
  std::vector<int64_t> stage_channels = {16, 32, 64, 128, 256};
  int64_t num_classes = 4;
  int64_t head_width = 64;   // 1x1 conv width, also the pooled vector width
  int64_t head_hidden = 64;  // hidden width of the two-layer classifiers
  int64_t input_size = 64;
  int64_t in_channels = 3;
  // Last classifier layer of every head starts at exactly zero.
  bool zero_init_classifiers = false;
  // Enhanced features feed the next stage. When false they only feed the
  // stage's own head and the next stage sees raw features.
  bool propagate_enhanced = true;
  ia::AttentionOptions attention{};

  /// Throws SpecError on an invalid combination.
  void validate() const;
  int64_t stage_count() const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

struct StageOutputs {
  std::array<torch::Tensor, 4> logits;      // indexed by Head, each (B, num_classes)
  std::array<torch::Tensor, 3> pooled;      // s3, s4, s5 pooled head features (B, head_width)
  std::array<torch::Tensor, 3> attention;   // (B, u, v) per stage; undefined when attention is off
  std::array<torch::Tensor, 3> importance;  // (B, C) per stage; undefined when attention is off

  const torch::Tensor& head(Head h) const { return logits[static_cast<std::size_t>(h)]; }
};

struct ForwardOptions {
  bool use_attention = true;
  // Per-sample target class for the attention gradient. Required when the
  // model is in training mode with attention on. Without targets each stage
  // uses its own head's argmax.
  std::optional<torch::Tensor> targets;
  // Replace attention and importance with ones (identity enhancement).
  bool force_unit_attention = false;
};

/// Sum of all four heads' scores with equal weights. With
/// `use_probabilities` the heads are softmaxed first.
torch::Tensor combined_prediction(const StageOutputs& out, bool use_probabilities = false);

/// Per-stage prediction head: 1x1 conv -> ReLU -> global max pool ->
/// two-layer classifier.
class StageHeadImpl : public torch::nn::Module {
 public:
  StageHeadImpl(int64_t in_channels, int64_t width, int64_t hidden, int64_t num_classes);

  torch::Tensor pool(const torch::Tensor& features);
  torch::Tensor classify(const torch::Tensor& pooled);
  torch::Tensor forward(const torch::Tensor& features) { return classify(pool(features)); }

  torch::nn::Linear last_layer() const { return fc2_; }

 private:
  torch::nn::Conv2d reduce_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(StageHead);

class ConcatHeadImpl : public torch::nn::Module {
 public:
  ConcatHeadImpl(int64_t in_features, int64_t hidden, int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& pooled_concat);
  torch::nn::Linear last_layer() const { return fc2_; }

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ConcatHead);

/// A backbone exposes its stages one at a time so IA blocks can sit between
/// them.
class Backbone : public torch::nn::Module {
 public:
  virtual int64_t stage_count() const = 0;
  virtual int64_t stage_channels(int64_t stage) const = 0;
  virtual torch::Tensor forward_stage(int64_t stage, const torch::Tensor& x) = 0;
};

std::shared_ptr<Backbone> make_backbone(const BackboneConfig& config);

class IagnNetImpl : public torch::nn::Module {
 public:
  explicit IagnNetImpl(BackboneConfig config);

  StageOutputs forward(const torch::Tensor& images, const ForwardOptions& options = {});

  /// Evaluation-time prediction: a first pass picks a provisional class with
  /// each stage's own head, a second pass uses the concat-head argmax of the
  /// first pass as the attention target. No gradients are recorded.
  StageOutputs infer(const torch::Tensor& images, bool use_attention = true);

  const BackboneConfig& config() const { return config_; }
  Backbone& backbone() { return *backbone_; }
  StageHead stage_head(int index) const { return stage_heads_.at(static_cast<std::size_t>(index)); }
  ConcatHead concat_head() const { return concat_head_; }

  /// Parameters of one head only (used to check distillation isolation).
  std::vector<torch::Tensor> head_parameters(Head head) const;

 private:
  BackboneConfig config_;
  std::shared_ptr<Backbone> backbone_;
  std::vector<StageHead> stage_heads_;
  ConcatHead concat_head_{nullptr};
};
TORCH_MODULE(IagnNet);

}  // namespace iagn::model
