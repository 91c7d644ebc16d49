#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code paths it is used to check.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

namespace iagn::testing {

/// Central-difference estimate of the per-channel spatial mean of
/// d score / d F, for a scalar score of a (C, u, v) double tensor.
inline std::vector<double> fd_channel_importance(const std::function<double(const torch::Tensor&)>& score,
                                                 const torch::Tensor& features, double step) {
  auto f = features.to(torch::kFloat64).clone();
  const auto c = f.size(0), u = f.size(1), v = f.size(2);
  std::vector<double> alpha(static_cast<std::size_t>(c), 0.0);
  auto acc = f.accessor<double, 3>();
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < u; ++i) {
      for (int64_t j = 0; j < v; ++j) {
        const double orig = acc[ch][i][j];
        acc[ch][i][j] = orig + step;
        const double up = score(f);
        acc[ch][i][j] = orig - step;
        const double down = score(f);
        acc[ch][i][j] = orig;
        alpha[static_cast<std::size_t>(ch)] += (up - down) / (2.0 * step);
      }
    }
    alpha[static_cast<std::size_t>(ch)] /= static_cast<double>(u * v);
  }
  return alpha;
}

/// Literal -sum_c y_c log p_c with a one-hot y.
inline double literal_cross_entropy(const std::vector<double>& probs, int64_t label) {
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    const double y = static_cast<int64_t>(c) == label ? 1.0 : 0.0;
    if (y != 0.0) loss += -y * std::log(probs[c]);
  }
  return loss;
}

/// T^2 * sum_c p_t log(p_t / p_s), softmaxes computed by hand.
inline double literal_kd(const std::vector<double>& student, const std::vector<double>& teacher, double t) {
  auto soft = [t](const std::vector<double>& z) {
    std::vector<double> e(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) sum += e[i] = std::exp(z[i] / t);
    for (auto& x : e) x /= sum;
    return e;
  };
  const auto ps = soft(student);
  const auto pt = soft(teacher);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) kl += pt[i] * std::log(pt[i] / ps[i]);
  return t * t * kl;
}

/// Argmax of the element-wise sum of several score vectors, by plain loops.
inline int64_t brute_force_combined_argmax(const std::vector<std::vector<double>>& heads) {
  std::vector<double> sum(heads.front().size(), 0.0);
  for (const auto& h : heads) {
    for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += h[c];
  }
  int64_t best = 0;
  for (std::size_t c = 1; c < sum.size(); ++c) {
    if (sum[c] > sum[static_cast<std::size_t>(best)]) best = static_cast<int64_t>(c);
  }
  return best;
}

/// Labels every patch of an N x N grid with its row-major id, one pixel per
/// patch, so a shuffled copy reveals where each patch came from.
inline torch::Tensor patch_id_image(int n, int patch = 1) {
  auto ids = torch::arange(n * n, torch::kLong).reshape({n, n});
  return ids.repeat_interleave(patch, 0).repeat_interleave(patch, 1);
}

/// Template-matching classifier: slide every class motif over the image and
/// pick the class with the smallest squared difference.
inline int template_match_class(const cv::Mat& image, const std::vector<cv::Mat>& motifs) {
  int best = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < motifs.size(); ++c) {
    cv::Mat result;
    cv::matchTemplate(image, motifs[c], result, cv::TM_SQDIFF);
    double min_val = 0.0;
    cv::minMaxLoc(result, &min_val);
    if (min_val < best_score) {
      best_score = min_val;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace iagn::testing
