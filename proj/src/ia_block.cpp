#include "iagn/ia_block.hpp"

#include <string>

#include "iagn/errors.hpp"

namespace iagn::ia {

namespace {

std::string shape_str(torch::IntArrayRef s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + ")";
}

void require_features(const torch::Tensor& f, const char* who) {
  if (f.dim() != 3 && f.dim() != 4) {
    throw DimensionError(std::string(who) + ": features must be (C,u,v) or (B,C,u,v), got " + shape_str(f.sizes()));
  }
}

}  // namespace

torch::Tensor channel_importance(const torch::Tensor& grad, torch::IntArrayRef feature_shape) {
  require_features(grad, "channel_importance");
  if (!feature_shape.empty() && grad.sizes() != feature_shape) {
    throw DimensionError("channel_importance: gradient " + shape_str(grad.sizes()) +
                         " does not match feature map " + shape_str(feature_shape));
  }
  return grad.mean({-2, -1});
}

torch::Tensor channel_weights(const torch::Tensor& importance) { return torch::softmax(importance, -1); }

torch::Tensor attention_map(const torch::Tensor& importance, const torch::Tensor& features,
                            const AttentionOptions& options) {
  require_features(features, "attention_map");
  if (importance.dim() != features.dim() - 2 || importance.size(-1) != features.size(-3) ||
      (features.dim() == 4 && importance.size(0) != features.size(0))) {
    throw DimensionError("attention_map: importance " + shape_str(importance.sizes()) +
                         " does not match features " + shape_str(features.sizes()));
  }
  auto w = channel_weights(importance).unsqueeze(-1).unsqueeze(-1);
  auto a = (w * features).sum(-3);
  return options.rectify ? torch::relu(a) : a;
}

torch::Tensor attention_enhance(const torch::Tensor& features, const torch::Tensor& attention,
                                const torch::Tensor& importance, const AttentionOptions& options) {
  require_features(features, "attention_enhance");
  const bool attention_ok = attention.dim() == features.dim() - 1 &&
                            attention.sizes().slice(attention.dim() - 2) == features.sizes().slice(features.dim() - 2) &&
                            (features.dim() == 3 || attention.size(0) == features.size(0));
  const bool importance_ok = importance.dim() == features.dim() - 2 && importance.size(-1) == features.size(-3) &&
                             (features.dim() == 3 || importance.size(0) == features.size(0));
  if (!attention_ok || !importance_ok) {
    throw DimensionError("attention_enhance: features " + shape_str(features.sizes()) + ", attention " +
                         shape_str(attention.sizes()) + ", importance " + shape_str(importance.sizes()));
  }
  auto out = features * attention.unsqueeze(-3) * importance.unsqueeze(-1).unsqueeze(-1);
  return options.residual ? out + features : out;
}

IaResult ia_forward(const torch::Tensor& features, const ScoreFn& score_fn, const torch::Tensor& classes,
                    const AttentionOptions& options) {
  if (features.dim() != 4) throw DimensionError("ia_forward: features must be (B,C,u,v), got " + shape_str(features.sizes()));
  if (classes.dim() != 1 || classes.size(0) != features.size(0)) {
    throw UsageError("ia_forward: need one target class per sample");
  }

  torch::Tensor grad;
  {
    torch::AutoGradMode enable(true);
    auto probe = features.detach().requires_grad_(true);
    auto scores = score_fn(probe);
    if (scores.dim() != 2 || scores.size(0) != features.size(0)) {
      throw UsageError("ia_forward: score function must return (B, num_classes)");
    }
    auto cls = classes.to(torch::kLong);
    if (cls.numel() > 0 && (cls.min().item<int64_t>() < 0 || cls.max().item<int64_t>() >= scores.size(1))) {
      throw UsageError("ia_forward: target class out of range [0, " + std::to_string(scores.size(1)) + ")");
    }
    auto target = scores.gather(1, cls.unsqueeze(1)).sum();
    if (!target.requires_grad()) throw UsageError("ia_forward: score function is not differentiable in its input");
    auto grads = torch::autograd::grad({target}, {probe}, /*grad_outputs=*/{}, /*retain_graph=*/false,
                                       /*create_graph=*/false, /*allow_unused=*/true);
    if (!grads[0].defined()) throw UsageError("ia_forward: score function does not depend on the features");
    grad = grads[0].detach();
  }

  auto importance = channel_importance(grad, features.sizes());
  auto attention = attention_map(importance, features.detach(), options);
  auto enhanced = attention_enhance(features, attention, importance, options);
  return {enhanced, attention, importance};
}

}  // namespace iagn::ia
