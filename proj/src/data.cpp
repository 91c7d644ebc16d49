#include "iagn/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include "iagn/log.hpp"

#include "iagn/errors.hpp"

namespace iagn::data {

namespace {

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().front() != '.') names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<Sample> scan_split(const fs::path& split_dir, const std::vector<std::string>& classes, int& skipped) {
  std::vector<Sample> samples;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    const auto class_dir = split_dir / classes[label];
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dir)) {
      if (!e.is_regular_file() || e.path().filename().string().front() == '.') continue;
      if (!cv::haveImageReader(e.path().string())) {
        log::warn("skipping unreadable image {}", e.path().string());
        ++skipped;
        continue;
      }
      files.push_back(e.path());
    }
    if (files.empty()) throw ConfigError("empty class directory: " + class_dir.string());
    std::sort(files.begin(), files.end());
    for (auto& f : files) samples.push_back({std::move(f), static_cast<int64_t>(label)});
  }
  return samples;
}

std::atomic<bool> g_upscale_warned{false};

cv::Mat resize_square(const cv::Mat& image, int target) {
  if ((image.cols < target || image.rows < target) && !g_upscale_warned.exchange(true)) {
    log::warn("upscaling {}x{} image to resize target {} (further upscales not reported)", image.cols, image.rows,
                 target);
  }
  cv::Mat out;
  cv::resize(image, out, cv::Size(target, target), 0, 0, cv::INTER_LINEAR);
  return out;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root not found: " + root.string());
  for (const char* split : {"train", "test"}) {
    if (!fs::is_directory(root / split)) throw ConfigError("dataset split missing: " + (root / split).string());
  }
  DatasetManifest m;
  m.root = root;
  m.classes = sorted_subdirs(root / "train");
  const auto test_classes = sorted_subdirs(root / "test");
  if (m.classes.empty()) throw ConfigError("no class directories under " + (root / "train").string());
  if (m.classes != test_classes) {
    throw ConfigError("class directories differ between " + (root / "train").string() + " and " +
                      (root / "test").string());
  }
  m.train = scan_split(root / "train", m.classes, m.skipped);
  m.test = scan_split(root / "test", m.classes, m.skipped);
  log::info("dataset {}: {} classes, {} train, {} test, {} skipped", root.string(), m.classes.size(), m.train.size(),
               m.test.size(), m.skipped);
  return m;
}

// ---------------------------------------------------------------- augmentation

void AugmentPolicy::validate() const {
  if (crop < 1 || resize < crop) throw ConfigError("augment: need 1 <= crop <= resize");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("augment.flip_prob must be in [0, 1]");
  if (max_rotation_deg < 0.0) throw ConfigError("augment.max_rotation_deg must be >= 0");
}

void to_json(nlohmann::json& j, const AugmentPolicy& p) {
  j = {{"resize", p.resize}, {"crop", p.crop}, {"flip_prob", p.flip_prob}, {"max_rotation_deg", p.max_rotation_deg}};
}

void from_json(const nlohmann::json& j, AugmentPolicy& p) {
  p.resize = j.value("resize", p.resize);
  p.crop = j.value("crop", p.crop);
  p.flip_prob = j.value("flip_prob", p.flip_prob);
  p.max_rotation_deg = j.value("max_rotation_deg", p.max_rotation_deg);
}

cv::Mat standard_augment(const cv::Mat& image, bool training, Rng& rng, const AugmentPolicy& policy) {
  auto resized = resize_square(image, policy.resize);
  const int slack = policy.resize - policy.crop;
  if (!training) {
    return resized(cv::Rect(slack / 2, slack / 2, policy.crop, policy.crop)).clone();
  }
  std::uniform_int_distribution<int> offset(0, slack);
  const int x0 = offset(rng);
  const int y0 = offset(rng);
  cv::Mat out = resized(cv::Rect(x0, y0, policy.crop, policy.crop)).clone();

  std::bernoulli_distribution coin(policy.flip_prob);
  const bool flip = policy.force_flip.value_or(coin(rng));
  if (flip) cv::flip(out, out, 1);

  if (policy.max_rotation_deg > 0.0) {
    std::uniform_real_distribution<double> angle(-policy.max_rotation_deg, policy.max_rotation_deg);
    const double deg = angle(rng);
    const cv::Point2f center((out.cols - 1) / 2.0F, (out.rows - 1) / 2.0F);
    cv::warpAffine(out, out, cv::getRotationMatrix2D(center, deg, 1.0), out.size(), cv::INTER_LINEAR,
                   cv::BORDER_REPLICATE);
  }
  return out;
}

cv::Mat read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  return img;
}

torch::Tensor mat_to_chw_u8(const cv::Mat& bgr) {
  if (bgr.type() != CV_8UC3) throw DimensionError("expected an 8-bit 3-channel image");
  cv::Mat cont = bgr.isContinuous() ? bgr : bgr.clone();
  auto t = torch::from_blob(cont.data, {cont.rows, cont.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).contiguous();
}

cv::Mat chw_u8_to_mat(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3 || chw.scalar_type() != torch::kUInt8) {
    throw DimensionError("expected a uint8 (3, H, W) tensor");
  }
  auto hwc = chw.permute({1, 2, 0}).contiguous();
  cv::Mat out(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3);
  std::memcpy(out.data, hwc.data_ptr<uint8_t>(), static_cast<std::size_t>(hwc.numel()));
  return out;
}

torch::Tensor image_to_tensor(const cv::Mat& bgr) {
  auto chw = mat_to_chw_u8(bgr).flip({0});  // BGR -> RGB
  return (chw.to(torch::kFloat32) / 255.0F - 0.5F) / 0.5F;
}

Box map_box_eval(const Box& box, int src_width, int src_height, const AugmentPolicy& policy) {
  const double sx = static_cast<double>(policy.resize) / src_width;
  const double sy = static_cast<double>(policy.resize) / src_height;
  const double off = (policy.resize - policy.crop) / 2;
  const auto x0 = std::clamp(static_cast<int>(std::floor(box.x * sx - off)), 0, policy.crop);
  const auto y0 = std::clamp(static_cast<int>(std::floor(box.y * sy - off)), 0, policy.crop);
  const auto x1 = std::clamp(static_cast<int>(std::ceil((box.x + box.w) * sx - off)), 0, policy.crop);
  const auto y1 = std::clamp(static_cast<int>(std::ceil((box.y + box.h) * sy - off)), 0, policy.crop);
  return {x0, y0, x1 - x0, y1 - y0};
}

// ---------------------------------------------------------------- synthetic

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (image_size < 8) throw ConfigError("synthetic: image_size must be >= 8");
  if (motif_size < 2 || motif_size * 4 >= image_size) {
    throw ConfigError(fmt::format("synthetic: motif_size must satisfy 2 <= motif < image_size/4 (motif={}, size={})",
                                  motif_size, image_size));
  }
  if (train_per_class < 1 || test_per_class < 1) throw ConfigError("synthetic: sample counts must be positive");
  if (noise < 0 || noise > 64) throw ConfigError("synthetic: noise must be in [0, 64]");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"num_classes", s.num_classes},         {"image_size", s.image_size},
       {"motif_size", s.motif_size},           {"train_per_class", s.train_per_class},
       {"test_per_class", s.test_per_class},   {"noise", s.noise},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.num_classes = j.value("num_classes", s.num_classes);
  s.image_size = j.value("image_size", s.image_size);
  s.motif_size = j.value("motif_size", s.motif_size);
  s.train_per_class = j.value("train_per_class", s.train_per_class);
  s.test_per_class = j.value("test_per_class", s.test_per_class);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
}

std::string synthetic_class_name(int index) { return fmt::format("class_{:02d}", index); }

cv::Mat render_template(const SyntheticSpec& spec) {
  const int n = spec.image_size;
  Rng rng(spec.seed ^ uint64_t{0x5eed});
  std::uniform_int_distribution<int> grain(-12, 12);
  cv::Mat img(n, n, CV_8UC3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double wave = 18.0 * std::sin(0.45 * x) + 14.0 * std::cos(0.31 * y + 0.2 * x);
      const int g = grain(rng);
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<uchar>(96 + wave + g),
                                          cv::saturate_cast<uchar>(112 + wave + g),
                                          cv::saturate_cast<uchar>(104 + 0.5 * wave + g));
    }
  }
  const cv::Point center(n / 2, n / 2);
  cv::ellipse(img, center, cv::Size(n * 7 / 20, n / 4), 15.0, 0.0, 360.0, cv::Scalar(70, 96, 132), cv::FILLED,
              cv::LINE_AA);
  cv::ellipse(img, center, cv::Size(n / 5, n / 10), 15.0, 0.0, 360.0, cv::Scalar(88, 120, 150), cv::FILLED,
              cv::LINE_AA);
  cv::line(img, cv::Point(n / 8, n * 7 / 8), cv::Point(n * 7 / 8, n / 8), cv::Scalar(60, 70, 80), 2, cv::LINE_AA);
  return img;
}

cv::Mat render_motif(const SyntheticSpec& spec, int class_index) {
  static const std::array<cv::Vec3b, 8> kPalette = {
      cv::Vec3b(40, 40, 230),  cv::Vec3b(40, 220, 40),  cv::Vec3b(230, 60, 30),  cv::Vec3b(30, 220, 230),
      cv::Vec3b(220, 40, 220), cv::Vec3b(230, 220, 40), cv::Vec3b(30, 140, 250), cv::Vec3b(245, 245, 245)};
  const int m = spec.motif_size;
  std::seed_seq seq{spec.seed, static_cast<uint64_t>(class_index), uint64_t{0x6d6f7469}};
  Rng rng(seq);
  std::bernoulli_distribution on(0.5);
  const auto fg = kPalette[static_cast<std::size_t>(class_index) % kPalette.size()];
  const cv::Vec3b bg(15, 15, 15);
  cv::Mat motif(m, m, CV_8UC3, cv::Scalar(bg[0], bg[1], bg[2]));
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < (m + 1) / 2; ++x) {
      const auto px = on(rng) ? fg : bg;
      motif.at<cv::Vec3b>(y, x) = px;
      motif.at<cv::Vec3b>(y, m - 1 - x) = px;
    }
  }
  // A fixed foreground cross keeps every motif clearly visible.
  for (int i = 0; i < m; ++i) {
    motif.at<cv::Vec3b>(m / 2, i) = fg;
    motif.at<cv::Vec3b>(i, m / 2) = fg;
    motif.at<cv::Vec3b>(i, (m - 1) / 2) = fg;
  }
  return motif;
}

SyntheticImage render_sample(const SyntheticSpec& spec, int class_index, Rng& rng) {
  SyntheticImage s;
  s.image = render_template(spec);
  std::uniform_int_distribution<int> pos(0, spec.image_size - spec.motif_size);
  s.motif_box = {pos(rng), pos(rng), spec.motif_size, spec.motif_size};
  render_motif(spec, class_index).copyTo(s.image(cv::Rect(s.motif_box.x, s.motif_box.y, spec.motif_size, spec.motif_size)));
  if (spec.noise > 0) {
    std::uniform_int_distribution<int> noise(-spec.noise, spec.noise);
    for (auto it = s.image.begin<cv::Vec3b>(); it != s.image.end<cv::Vec3b>(); ++it) {
      for (int c = 0; c < 3; ++c) (*it)[c] = cv::saturate_cast<uchar>((*it)[c] + noise(rng));
    }
  }
  return s;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, const fs::path& out) {
  spec.validate();
  SyntheticDataset ds;
  nlohmann::json boxes = nlohmann::json::object();
  const std::array<std::pair<const char*, int>, 2> splits = {{{"train", spec.train_per_class}, {"test", spec.test_per_class}}};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& [split, count] = splits[s];
    for (int c = 0; c < spec.num_classes; ++c) {
      const auto dir = out / split / synthetic_class_name(c);
      fs::create_directories(dir);
      for (int i = 0; i < count; ++i) {
        std::seed_seq seq{spec.seed, static_cast<uint64_t>(s), static_cast<uint64_t>(c), static_cast<uint64_t>(i)};
        Rng rng(seq);
        auto sample = render_sample(spec, c, rng);
        const auto rel = fs::path(split) / synthetic_class_name(c) / fmt::format("{:05d}.png", i);
        if (!cv::imwrite((out / rel).string(), sample.image)) throw RuntimeFailure("cannot write " + (out / rel).string());
        ds.motif_boxes[rel.generic_string()] = sample.motif_box;
        const auto& b = sample.motif_box;
        boxes[rel.generic_string()] = {b.x, b.y, b.w, b.h};
      }
    }
  }
  nlohmann::json ann = {{"synthetic_spec", spec}, {"box_format", "x,y,w,h"}, {"motif_boxes", boxes}};
  std::ofstream(out / "annotations.json") << ann.dump(1) << '\n';
  ds.manifest = load_manifest(out);
  return ds;
}

std::map<std::string, Box> load_motif_boxes(const fs::path& root) {
  std::map<std::string, Box> out;
  std::ifstream in(root / "annotations.json");
  if (!in) return out;
  const auto j = nlohmann::json::parse(in);
  for (const auto& [key, v] : j.at("motif_boxes").items()) {
    out[key] = {v.at(0).get<int>(), v.at(1).get<int>(), v.at(2).get<int>(), v.at(3).get<int>()};
  }
  return out;
}

// ---------------------------------------------------------------- in-memory

ImageSet load_split(const std::vector<Sample>& samples) {
  ImageSet set;
  for (const auto& s : samples) {
    auto img = read_image(s.path);
    if (img.empty()) {
      log::warn("skipping unreadable image {}", s.path.string());
      ++set.skipped;
      continue;
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(s.label);
    set.paths.push_back(s.path);
  }
  return set;
}

torch::Tensor eval_batch(const ImageSet& set, const std::vector<std::size_t>& indices, const AugmentPolicy& policy) {
  std::vector<torch::Tensor> items;
  items.reserve(indices.size());
  Rng unused(0);
  for (auto i : indices) items.push_back(image_to_tensor(standard_augment(set.images.at(i), false, unused, policy)));
  return torch::stack(items);
}

}  // namespace iagn::data
