#include "iagn/model.hpp"

#include <string>

#include "iagn/errors.hpp"

namespace iagn::model {

namespace nn = torch::nn;

std::string_view head_name(Head head) {
  switch (head) {
    case Head::kS3: return "s3";
    case Head::kS4: return "s4";
    case Head::kS5: return "s5";
    case Head::kConcat: return "concat";
  }
  return "?";
}

Head parse_head(std::string_view name) {
  for (auto h : kAllHeads) {
    if (head_name(h) == name) return h;
  }
  throw SpecError("unknown head '" + std::string(name) + "' (expected s3, s4, s5 or concat)");
}

void BackboneConfig::validate() const {
  if (kind != "desk" && kind != "resnet50") throw SpecError("model.kind must be 'desk' or 'resnet50', got '" + kind + "'");
  if (kind == "desk" && stage_channels.size() < static_cast<std::size_t>(kInstrumentedStages)) {
    throw SpecError("model.stage_channels needs at least 3 stages");
  }
  for (auto c : stage_channels) {
    if (c < 1) throw SpecError("model.stage_channels entries must be positive");
  }
  if (num_classes < 2) throw SpecError("model.num_classes must be >= 2");
  if (head_width < 1 || head_hidden < 1) throw SpecError("model.head_width and model.head_hidden must be positive");
  if (input_size < 1 || in_channels < 1) throw SpecError("model.input_size and model.in_channels must be positive");
}

int64_t BackboneConfig::stage_count() const {
  return kind == "resnet50" ? 5 : static_cast<int64_t>(stage_channels.size());
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"kind", c.kind},
       {"stage_channels", c.stage_channels},
       {"num_classes", c.num_classes},
       {"head_width", c.head_width},
       {"head_hidden", c.head_hidden},
       {"input_size", c.input_size},
       {"in_channels", c.in_channels},
       {"zero_init_classifiers", c.zero_init_classifiers},
       {"propagate_enhanced", c.propagate_enhanced},
       {"rectify_attention", c.attention.rectify},
       {"residual_enhance", c.attention.residual}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c.kind = j.value("kind", c.kind);
  c.stage_channels = j.value("stage_channels", c.stage_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.head_width = j.value("head_width", c.head_width);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.input_size = j.value("input_size", c.input_size);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.zero_init_classifiers = j.value("zero_init_classifiers", c.zero_init_classifiers);
  c.propagate_enhanced = j.value("propagate_enhanced", c.propagate_enhanced);
  c.attention.rectify = j.value("rectify_attention", c.attention.rectify);
  c.attention.residual = j.value("residual_enhance", c.attention.residual);
}

torch::Tensor combined_prediction(const StageOutputs& out, bool use_probabilities) {
  torch::Tensor sum;
  for (auto h : kAllHeads) {
    auto s = use_probabilities ? torch::softmax(out.head(h), -1) : out.head(h);
    sum = sum.defined() ? sum + s : s;
  }
  return sum;
}

// ---------------------------------------------------------------- heads

StageHeadImpl::StageHeadImpl(int64_t in_channels, int64_t width, int64_t hidden, int64_t num_classes)
    : reduce_(register_module("reduce", nn::Conv2d(nn::Conv2dOptions(in_channels, width, 1)))),
      fc1_(register_module("fc1", nn::Linear(width, hidden))),
      fc2_(register_module("fc2", nn::Linear(hidden, num_classes))) {}

torch::Tensor StageHeadImpl::pool(const torch::Tensor& features) {
  return torch::relu(reduce_(features)).amax({-2, -1});
}

torch::Tensor StageHeadImpl::classify(const torch::Tensor& pooled) { return fc2_(torch::relu(fc1_(pooled))); }

ConcatHeadImpl::ConcatHeadImpl(int64_t in_features, int64_t hidden, int64_t num_classes)
    : fc1_(register_module("fc1", nn::Linear(in_features, hidden))),
      fc2_(register_module("fc2", nn::Linear(hidden, num_classes))) {}

torch::Tensor ConcatHeadImpl::forward(const torch::Tensor& pooled_concat) {
  return fc2_(torch::relu(fc1_(pooled_concat)));
}

// ---------------------------------------------------------------- backbones

namespace {

nn::Sequential conv_bn_relu(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false)),
                        nn::BatchNorm2d(out), nn::ReLU(nn::ReLUOptions(true)));
}

// Five (or more) stride-2 stages of two 3x3 convolutions each.
class DeskBackbone : public Backbone {
 public:
  explicit DeskBackbone(const BackboneConfig& config) : channels_(config.stage_channels) {
    int64_t in = config.in_channels;
    for (std::size_t i = 0; i < channels_.size(); ++i) {
      auto stage = nn::Sequential();
      stage->extend(*conv_bn_relu(in, channels_[i], 3, 2));
      stage->extend(*conv_bn_relu(channels_[i], channels_[i], 3, 1));
      stages_.push_back(register_module("stage" + std::to_string(i + 1), stage));
      in = channels_[i];
    }
  }

  int64_t stage_count() const override { return static_cast<int64_t>(stages_.size()); }
  int64_t stage_channels(int64_t stage) const override { return channels_.at(static_cast<std::size_t>(stage)); }
  torch::Tensor forward_stage(int64_t stage, const torch::Tensor& x) override {
    return stages_.at(static_cast<std::size_t>(stage))->forward(x);
  }

 private:
  std::vector<int64_t> channels_;
  std::vector<nn::Sequential> stages_;
};

class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int64_t in, int64_t width, int64_t stride) {
    const int64_t out = width * 4;
    body_ = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, width, 1).bias(false)), nn::BatchNorm2d(width),
                               nn::ReLU(true),
                               nn::Conv2d(nn::Conv2dOptions(width, width, 3).stride(stride).padding(1).bias(false)),
                               nn::BatchNorm2d(width), nn::ReLU(true),
                               nn::Conv2d(nn::Conv2dOptions(width, out, 1).bias(false)), nn::BatchNorm2d(out)));
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                                     nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto identity = shortcut_ ? shortcut_->forward(x) : x;
    return torch::relu(body_->forward(x) + identity);
  }

 private:
  nn::Sequential body_{nullptr};
  nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(Bottleneck);

// Standard ResNet-50 layout; the stem is stage 1, conv2_x..conv5_x are
// stages 2..5 with 256/512/1024/2048 output channels.
class ResNet50Backbone : public Backbone {
 public:
  explicit ResNet50Backbone(const BackboneConfig& config) {
    stages_.push_back(register_module(
        "stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(config.in_channels, 64, 7).stride(2).padding(3).bias(false)),
                               nn::BatchNorm2d(64), nn::ReLU(true),
                               nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)))));
    const std::array<int64_t, 4> blocks = {3, 4, 6, 3};
    const std::array<int64_t, 4> widths = {64, 128, 256, 512};
    int64_t in = 64;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto layer = nn::Sequential();
      for (int64_t b = 0; b < blocks[l]; ++b) {
        const int64_t stride = (b == 0 && l > 0) ? 2 : 1;
        layer->push_back(Bottleneck(in, widths[l], stride));
        in = widths[l] * 4;
      }
      stages_.push_back(register_module("layer" + std::to_string(l + 1), layer));
    }
  }

  int64_t stage_count() const override { return 5; }
  int64_t stage_channels(int64_t stage) const override {
    static constexpr std::array<int64_t, 5> kChannels = {64, 256, 512, 1024, 2048};
    return kChannels.at(static_cast<std::size_t>(stage));
  }
  torch::Tensor forward_stage(int64_t stage, const torch::Tensor& x) override {
    return stages_.at(static_cast<std::size_t>(stage))->forward(x);
  }

 private:
  std::vector<nn::Sequential> stages_;
};

}  // namespace

std::shared_ptr<Backbone> make_backbone(const BackboneConfig& config) {
  config.validate();
  if (config.kind == "resnet50") return std::make_shared<ResNet50Backbone>(config);
  return std::make_shared<DeskBackbone>(config);
}

// ---------------------------------------------------------------- network

IagnNetImpl::IagnNetImpl(BackboneConfig config) : config_(std::move(config)) {
  backbone_ = register_module("backbone", make_backbone(config_));
  const auto n = backbone_->stage_count();
  for (int i = 0; i < kInstrumentedStages; ++i) {
    const auto stage = n - kInstrumentedStages + i;
    stage_heads_.push_back(register_module(
        "head_s" + std::to_string(i + 3),
        StageHead(backbone_->stage_channels(stage), config_.head_width, config_.head_hidden, config_.num_classes)));
  }
  concat_head_ = register_module(
      "head_concat", ConcatHead(kInstrumentedStages * config_.head_width, config_.head_hidden, config_.num_classes));

  if (config_.zero_init_classifiers) {
    torch::NoGradGuard guard;
    auto zero = [](nn::Linear l) {
      l->weight.zero_();
      l->bias.zero_();
    };
    for (auto& h : stage_heads_) zero(h->last_layer());
    zero(concat_head_->last_layer());
  }
}

StageOutputs IagnNetImpl::forward(const torch::Tensor& images, const ForwardOptions& options) {
  if (images.dim() != 4 || images.size(1) != config_.in_channels) {
    throw DimensionError("IagnNet expects (B, " + std::to_string(config_.in_channels) + ", H, W) images");
  }
  if (options.use_attention && is_training() && !options.targets) {
    throw UsageError("training with attention needs target labels");
  }
  if (options.targets && options.targets->size(0) != images.size(0)) {
    throw UsageError("targets must have one label per image");
  }

  StageOutputs out;
  const auto n = backbone_->stage_count();
  const auto first = n - kInstrumentedStages;
  auto x = images;
  for (int64_t s = 0; s < first; ++s) x = backbone_->forward_stage(s, x);

  for (int i = 0; i < kInstrumentedStages; ++i) {
    auto features = backbone_->forward_stage(first + i, x);
    auto head = stage_heads_[static_cast<std::size_t>(i)];
    auto pooled = head->pool(features);
    auto logits = head->classify(pooled);
    auto next = features;

    if (options.use_attention) {
      torch::Tensor target = options.targets ? *options.targets : logits.detach().argmax(1);
      auto score = [&head](const torch::Tensor& f) { return head->forward(f); };
      auto ia_out = ia::ia_forward(features, score, target, config_.attention);
      auto enhanced = ia_out.enhanced;
      if (options.force_unit_attention) {
        enhanced = ia::attention_enhance(features, torch::ones_like(ia_out.attention),
                                         torch::ones_like(ia_out.importance), config_.attention);
      }
      out.attention[static_cast<std::size_t>(i)] = ia_out.attention;
      out.importance[static_cast<std::size_t>(i)] = ia_out.importance;
      if (config_.propagate_enhanced) {
        next = enhanced;
      } else {
        pooled = head->pool(enhanced);
        logits = head->classify(pooled);
      }
    }
    out.pooled[static_cast<std::size_t>(i)] = pooled;
    out.logits[static_cast<std::size_t>(i)] = logits;
    x = next;
  }
  out.logits[static_cast<std::size_t>(Head::kConcat)] = concat_head_->forward(torch::cat({out.pooled[0], out.pooled[1], out.pooled[2]}, 1));
  return out;
}

StageOutputs IagnNetImpl::infer(const torch::Tensor& images, bool use_attention) {
  torch::NoGradGuard no_grad;
  ForwardOptions opts;
  opts.use_attention = use_attention;
  if (!use_attention) return forward(images, opts);
  auto provisional = forward(images, opts);
  opts.targets = provisional.head(Head::kConcat).argmax(1);
  return forward(images, opts);
}

std::vector<torch::Tensor> IagnNetImpl::head_parameters(Head head) const {
  if (head == Head::kConcat) return concat_head_->parameters();
  return stage_heads_.at(static_cast<std::size_t>(head))->parameters();
}

}  // namespace iagn::model
