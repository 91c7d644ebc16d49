#pragma once

// Gradient-derived interpretable attention.
//
// All functions accept batched tensors: features (B, C, u, v), channel
// importance (B, C), attention maps (B, u, v). Unbatched inputs (C, u, v) /
// (C) / (u, v) are accepted too and returned unbatched.

#include <functional>

#include <torch/torch.h>

namespace iagn::ia {

struct AttentionOptions {
  // Clamp the attention map at zero (Grad-CAM style). Off by default.
  bool rectify = false;
  // Add the input features back onto the enhanced map (F + F*A*alpha).
  bool residual = false;
};

/// Spatial mean of the class-score gradient per channel.
/// Throws DimensionError if `grad` does not match `feature_shape` (when given).
torch::Tensor channel_importance(const torch::Tensor& grad,
                                 torch::IntArrayRef feature_shape = {});

/// Softmax of the importance over channels.
torch::Tensor channel_weights(const torch::Tensor& importance);

/// A[i,j] = sum_ch softmax(alpha)[ch] * F[ch,i,j].
torch::Tensor attention_map(const torch::Tensor& importance, const torch::Tensor& features,
                            const AttentionOptions& options = {});

/// F_hat[ch,i,j] = F[ch,i,j] * A[i,j] * alpha[ch], raw (un-softmaxed) alpha.
/// Gradients flow into F only if the caller passes detached A and alpha.
torch::Tensor attention_enhance(const torch::Tensor& features, const torch::Tensor& attention,
                                const torch::Tensor& importance, const AttentionOptions& options = {});

struct IaResult {
  torch::Tensor enhanced;    // (B, C, u, v), differentiable w.r.t. the input features
  torch::Tensor attention;   // (B, u, v), detached
  torch::Tensor importance;  // (B, C), detached
};

/// Maps features (B, C, u, v) to class scores (B, num_classes), pre-softmax.
using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Differentiates score[b, classes[b]] with respect to a detached copy of the
/// features (parameter .grad accumulators are left untouched), then chains
/// channel_importance -> attention_map -> attention_enhance.
/// `classes` is a Long tensor of shape (B). Throws UsageError for an
/// out-of-range class or a score function that does not depend on its input.
IaResult ia_forward(const torch::Tensor& features, const ScoreFn& score_fn, const torch::Tensor& classes,
                    const AttentionOptions& options = {});

}  // namespace iagn::ia
