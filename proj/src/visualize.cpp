#include "iagn/visualize.hpp"

#include <opencv2/imgproc.hpp>

#include "iagn/errors.hpp"

namespace iagn::viz {

torch::Tensor normalize_heatmap(const torch::Tensor& map) {
  auto m = map.detach().to(torch::kFloat64);
  const double lo = m.min().item<double>();
  const double hi = m.max().item<double>();
  if (!(hi > lo)) return torch::zeros_like(m).to(torch::kFloat32);
  return ((m - lo) / (hi - lo)).to(torch::kFloat32);
}

torch::Tensor upsample_heatmap(const torch::Tensor& map, int64_t height, int64_t width) {
  if (map.dim() != 2) throw DimensionError("upsample_heatmap expects a (u, v) map");
  namespace F = torch::nn::functional;
  auto up = F::interpolate(map.to(torch::kFloat32).unsqueeze(0).unsqueeze(0),
                           F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
  return up.squeeze(0).squeeze(0).clamp(0.0, 1.0);
}

cv::Mat heatmap_to_gray(const torch::Tensor& heatmap) {
  auto u8 = (heatmap.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat out(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1);
  std::memcpy(out.data, u8.data_ptr<uint8_t>(), static_cast<std::size_t>(u8.numel()));
  return out;
}

cv::Mat overlay(const cv::Mat& bgr, const torch::Tensor& heatmap, double alpha) {
  cv::Mat colored;
  cv::applyColorMap(heatmap_to_gray(heatmap), colored, cv::COLORMAP_JET);
  if (colored.size() != bgr.size()) throw DimensionError("overlay: heatmap and image sizes differ");
  cv::Mat out;
  cv::addWeighted(bgr, 1.0 - alpha, colored, alpha, 0.0, out);
  return out;
}

double attention_mass(const torch::Tensor& heatmap, const data::Box& box) {
  using torch::indexing::Slice;
  const double total = heatmap.sum().item<double>();
  if (total <= 0.0) return 0.0;
  const double inside = heatmap.index({Slice(box.y, box.y + box.h), Slice(box.x, box.x + box.w)}).sum().item<double>();
  return inside / total;
}

nlohmann::json map_to_json(const torch::Tensor& map) {
  auto m = map.detach().to(torch::kFloat64).contiguous();
  nlohmann::json rows = nlohmann::json::array();
  for (int64_t i = 0; i < m.size(0); ++i) {
    auto row = m[i];
    rows.push_back(std::vector<double>(row.data_ptr<double>(), row.data_ptr<double>() + row.numel()));
  }
  return rows;
}

HeatmapArtifact make_artifact(model::IagnNet& net, const cv::Mat& image, const data::AugmentPolicy& policy) {
  HeatmapArtifact a;
  Rng unused(0);
  a.input = data::standard_augment(image, false, unused, policy);
  net->eval();
  auto out = net->infer(data::image_to_tensor(a.input).unsqueeze(0));
  for (std::size_t s = 0; s < 3; ++s) {
    a.heatmaps[s] = upsample_heatmap(normalize_heatmap(out.attention[s][0]), a.input.rows, a.input.cols);
    a.overlays[s] = overlay(a.input, a.heatmaps[s]);
  }
  auto combined = model::combined_prediction(out)[0];
  a.predicted_class = combined.argmax().item<int64_t>();
  auto vec = [](const torch::Tensor& t) {
    auto d = t.to(torch::kFloat64).contiguous();
    return std::vector<double>(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  };
  for (auto h : model::kAllHeads) a.logits[std::string(model::head_name(h))] = vec(out.head(h)[0]);
  a.logits["combined"] = vec(combined);
  return a;
}

}  // namespace iagn::viz
