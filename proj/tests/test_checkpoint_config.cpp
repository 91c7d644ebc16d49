#include <gtest/gtest.h>

#include <fstream>

#include "iagn/checkpoint.hpp"
#include "iagn/errors.hpp"
#include "iagn/run_config.hpp"
#include "iagn/visualize.hpp"
#include "support/temp_dir.hpp"

namespace iagn {
namespace {

namespace fs = std::filesystem;
using iagn::testing::TempDir;

training::TrainConfig small_config() {
  training::TrainConfig c;
  c.model.stage_channels = {4, 8, 8, 8, 8};
  c.model.head_width = 8;
  c.model.head_hidden = 8;
  return c;
}

TEST(GitBlobSha1, KnownObjectIds) {
  EXPECT_EQ(checkpoint::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(checkpoint::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  TempDir dir("ckpt");
  auto cfg = small_config();
  torch::manual_seed(2);
  model::IagnNet net(cfg.model);
  torch::optim::SGD opt(net->parameters(), torch::optim::SGDOptions(0.1).momentum(0.9));
  checkpoint::CheckpointInfo info;
  info.epoch = 3;
  info.class_names = {"a", "b", "c", "d"};
  auto sidecar = checkpoint::save(dir.path(), "best", net, &opt, cfg, info);
  EXPECT_TRUE(fs::exists(dir / "best.pt"));
  EXPECT_TRUE(fs::exists(dir / "best.optim.pt"));

  for (const auto& path : {sidecar, dir / "best.pt"}) {
    auto loaded = checkpoint::load(path);
    EXPECT_FALSE(loaded.net->is_training());
    EXPECT_EQ(loaded.sidecar.at("epoch"), 3);
    EXPECT_EQ(loaded.sidecar.at("class_names").size(), 4u);
    EXPECT_EQ(loaded.sidecar.at("weights_sha1"), checkpoint::git_blob_sha1_file(dir / "best.pt"));
    auto a = net->named_parameters();
    for (const auto& p : loaded.net->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), a[p.key()]));
    EXPECT_EQ(nlohmann::json(loaded.config), nlohmann::json(cfg));
  }
}

TEST(Checkpoint, TamperedWeightsAreRejected) {
  TempDir dir("ckpt_tamper");
  auto cfg = small_config();
  model::IagnNet net(cfg.model);
  checkpoint::save(dir.path(), "last", net, nullptr, cfg, {});
  EXPECT_FALSE(fs::exists(dir / "last.optim.pt"));
  std::ofstream(dir / "last.pt", std::ios::app) << "x";
  EXPECT_THROW(checkpoint::load(dir / "last.json"), ConfigError);
  EXPECT_THROW(checkpoint::load(dir / "missing.json"), ConfigError);
}

TEST(RunConfigResolve, OverridesAndDefaults) {
  nlohmann::json doc = nlohmann::json::object();
  config::apply_override(doc, "optim.learning_rate=0.2");
  config::apply_override(doc, "model.kind=desk");
  config::apply_override(doc, "data_dir=/tmp/x");
  auto rc = config::resolve(doc);
  EXPECT_DOUBLE_EQ(rc.train.optim.learning_rate, 0.2);
  EXPECT_EQ(rc.data_dir, "/tmp/x");
  EXPECT_EQ(rc.train.optim.batch_size, 16);
  EXPECT_EQ(rc.train.schedule.steps.size(), 4u);
}

TEST(RunConfigResolve, FieldLevelErrors) {
  auto expect_msg = [](const nlohmann::json& doc, const std::string& needle) {
    try {
      config::resolve(doc);
      FAIL() << "expected ConfigError for " << doc.dump();
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_msg({{"optim", {{"learnin_rate", 0.1}}}}, "optim.learnin_rate");
  expect_msg({{"bogus", 1}}, "bogus");
  expect_msg({{"optim", {{"batch_size", "ten"}}}}, "optim");
  expect_msg({{"optim", {{"batch_size", 0}}}}, "batch_size");
  nlohmann::json doc = nlohmann::json::object();
  EXPECT_THROW(config::apply_override(doc, "nosuch.key=1"), ConfigError);
  EXPECT_THROW(config::apply_override(doc, "=1"), ConfigError);
}

TEST(RunConfigResolve, ShippedProfilesParse) {
  auto desk = config::resolve(config::read_json_file(fs::path(IAGN_SOURCE_DIR) / "configs/desk.json"));
  EXPECT_EQ(desk.train.model.input_size, 64);
  auto full = config::resolve(config::read_json_file(fs::path(IAGN_SOURCE_DIR) / "configs/full_scale.json"));
  EXPECT_EQ(full.train.model.kind, "resnet50");
  EXPECT_EQ(full.train.augment.resize, 512);
  EXPECT_EQ(full.train.augment.crop, 448);
  EXPECT_EQ(full.train.optim.batch_size, 10);
  EXPECT_EQ(full.train.optim.epochs, 150);
  EXPECT_DOUBLE_EQ(full.train.optim.momentum, 0.9);
  EXPECT_DOUBLE_EQ(full.train.optim.weight_decay, 5e-4);
}

TEST(Heatmap, ConstantMapNormalizesToZeros) {
  auto h = viz::normalize_heatmap(torch::full({4, 4}, 3.5));
  EXPECT_TRUE(torch::equal(h, torch::zeros({4, 4})));
}

TEST(Heatmap, MinMaxRangeIsUnitInterval) {
  auto h = viz::normalize_heatmap(torch::randn({5, 7}));
  EXPECT_FLOAT_EQ(h.min().item<float>(), 0.0F);
  EXPECT_FLOAT_EQ(h.max().item<float>(), 1.0F);
  auto up = viz::upsample_heatmap(h, 35, 49);
  EXPECT_EQ(up.sizes(), (std::vector<int64_t>{35, 49}));
  EXPECT_GE(up.min().item<float>(), 0.0F);
  EXPECT_LE(up.max().item<float>(), 1.0F);
}

TEST(Heatmap, AttentionMassOfBox) {
  auto h = torch::zeros({8, 8});
  h.slice(0, 2, 4).slice(1, 2, 4).fill_(1.0);
  EXPECT_DOUBLE_EQ(viz::attention_mass(h, {2, 2, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(viz::attention_mass(h, {0, 0, 3, 3}), 0.25);
  EXPECT_DOUBLE_EQ(viz::attention_mass(torch::zeros({8, 8}), {0, 0, 3, 3}), 0.0);
  EXPECT_DOUBLE_EQ(viz::attention_mass(torch::ones({8, 8}), {0, 0, 4, 2}), 8.0 / 64.0);
}

TEST(Heatmap, ArtifactMatchesInputSize) {
  torch::manual_seed(0);
  model::IagnNet net(small_config().model);
  net->eval();
  cv::Mat img(72, 72, CV_8UC3, cv::Scalar(30, 90, 200));
  auto art = viz::make_artifact(net, img, {});
  EXPECT_EQ(art.input.size(), cv::Size(64, 64));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(art.heatmaps[i].sizes(), (std::vector<int64_t>{64, 64}));
    EXPECT_GE(art.heatmaps[i].min().item<float>(), 0.0F);
    EXPECT_LE(art.heatmaps[i].max().item<float>(), 1.0F);
    EXPECT_EQ(art.overlays[i].size(), cv::Size(64, 64));
  }
  EXPECT_TRUE(art.logits.contains("concat"));
}

}  // namespace
}  // namespace iagn
