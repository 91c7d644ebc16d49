#include "iagn/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <opencv2/imgcodecs.hpp>

#include "iagn/log.hpp"

#include "iagn/checkpoint.hpp"
#include "iagn/data.hpp"
#include "iagn/errors.hpp"
#include "iagn/patch_shuffle.hpp"
#include "iagn/run_config.hpp"
#include "iagn/training.hpp"
#include "iagn/visualize.hpp"

namespace iagn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides;
  bool dry_run = false;
};

std::string metrics_header(const training::TrainSchedule& schedule) {
  std::string h = "epoch,learning_rate,acc_s3,acc_s4,acc_s5,acc_concat,acc_combined";
  for (std::size_t s = 0; s < schedule.steps.size(); ++s) {
    h += fmt::format(",step{0}_ce,step{0}_kd,step{0}_total", s + 1);
  }
  return h;
}

std::string metrics_row(const training::EpochMetrics& m) {
  auto acc = [&](std::size_t i) { return m.eval ? fmt::format("{:.6f}", m.eval->head_accuracy[i]) : std::string(); };
  std::string row = fmt::format("{},{:.8f},{},{},{},{},{}", m.epoch, m.learning_rate, acc(0), acc(1), acc(2), acc(3),
                                m.eval ? fmt::format("{:.6f}", m.eval->combined_accuracy) : std::string());
  for (std::size_t s = 0; s < m.step_total.size(); ++s) {
    row += fmt::format(",{:.8f},{:.8f},{:.8f}", m.step_ce[s], m.step_kd[s], m.step_total[s]);
  }
  return row;
}

config::RunConfig resolve_train_config(const TrainArgs& a) {
  json doc = a.config_path.empty() ? json::object() : config::read_json_file(a.config_path);
  if (!a.data_dir.empty()) doc["data_dir"] = a.data_dir;
  if (!a.out_dir.empty()) doc["output_dir"] = a.out_dir;
  if (a.epochs) doc["optim"]["epochs"] = *a.epochs;
  if (a.batch_size) doc["optim"]["batch_size"] = *a.batch_size;
  if (a.lr) doc["optim"]["learning_rate"] = *a.lr;
  if (a.seed) doc["optim"]["seed"] = *a.seed;
  for (const auto& o : a.overrides) config::apply_override(doc, o);
  return config::resolve(doc);
}

int dry_run(const config::RunConfig& rc) {
  torch::manual_seed(rc.train.optim.seed);
  model::IagnNet net(rc.train.model);
  net->train();
  const auto s = rc.train.model.input_size;
  auto images = torch::randn({1, rc.train.model.in_channels, s, s});
  model::ForwardOptions opts;
  opts.targets = torch::zeros({1}, torch::kLong);
  auto out = net->forward(images, opts);
  std::cout << json{{"resolved_config", rc},
                    {"parameters", [&] {
                       int64_t n = 0;
                       for (const auto& p : net->parameters()) n += p.numel();
                       return n;
                     }()},
                    {"logits_shape", {out.head(model::Head::kConcat).size(0), out.head(model::Head::kConcat).size(1)}}}
                   .dump(2)
            << '\n';
  return kSuccess;
}

int cmd_train(const TrainArgs& a) {
  const auto rc = resolve_train_config(a);
  if (a.dry_run) return dry_run(rc);

  if (rc.data_dir.empty()) throw ConfigError("data_dir is not set (use --data)");
  if (!fs::is_directory(rc.data_dir)) throw ConfigError("dataset path not found: " + rc.data_dir);
  const auto manifest = data::load_manifest(rc.data_dir);
  if (manifest.num_classes() != rc.train.model.num_classes) {
    throw ConfigError(fmt::format("model.num_classes is {} but dataset {} has {} classes", rc.train.model.num_classes,
                                  rc.data_dir, manifest.num_classes()));
  }

  const fs::path out = rc.output_dir;
  fs::create_directories(out);
  const json resolved = rc;
  write_json(out / "resolved_config.json", resolved);

  std::ofstream csv(out / "metrics.csv");
  csv << "# config=" << resolved.dump() << '\n' << metrics_header(rc.train.schedule) << '\n' << std::flush;

  checkpoint::CheckpointInfo info;
  info.class_names = manifest.classes;
  try {
    const auto train_set = data::load_split(manifest.train);
    const auto test_set = data::load_split(manifest.test);

    training::TrainCallbacks cb;
    cb.on_epoch = [&](const training::EpochMetrics& m, bool is_best, training::Trainer& trainer) {
      csv << metrics_row(m) << '\n' << std::flush;
      info.history.push_back(m);
      info.epoch = m.epoch;
      if (is_best) checkpoint::save(out, "best", trainer.net(), nullptr, rc.train, info);
      checkpoint::save(out, "last", trainer.net(), &trainer.optimizer(), rc.train, info);
    };
    auto result = training::train(train_set, test_set, manifest.num_classes(), rc.train, cb);

    if (result.history.empty()) {
      checkpoint::save(out, "best", result.best, nullptr, rc.train, info);
      checkpoint::save(out, "last", result.last, nullptr, rc.train, info);
    }
    json summary = {{"best_epoch", result.best_epoch},
                    {"best_combined_accuracy", result.best_combined_accuracy},
                    {"epochs", result.history.size()},
                    {"weights_sha1", checkpoint::git_blob_sha1_file(out / "best.pt")}};
    write_json(out / "train_summary.json", summary);
    std::cout << summary.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::ofstream(out / "error.log") << utc_timestamp() << " training failed: " << e.what() << '\n';
    throw;
  }
  return kSuccess;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint_path;
  std::string data_dir;
  std::string split = "test";
  std::string report_path;
  std::string dump_path;
  int batch_size = 32;
};

int cmd_eval(const EvalArgs& a) {
  auto ckpt = checkpoint::load(a.checkpoint_path);
  std::string data_dir = a.data_dir;
  if (data_dir.empty()) throw ConfigError("dataset path not set (use --data)");
  if (!fs::is_directory(data_dir)) throw ConfigError("dataset path not found: " + data_dir);
  const auto manifest = data::load_manifest(data_dir);
  if (manifest.num_classes() != ckpt.config.model.num_classes) {
    throw ConfigError(fmt::format("checkpoint expects {} classes but dataset {} has {}", ckpt.config.model.num_classes,
                                  data_dir, manifest.num_classes()));
  }
  if (a.split != "test" && a.split != "train") throw ConfigError("--split must be 'train' or 'test'");
  const auto set = data::load_split(a.split == "test" ? manifest.test : manifest.train);
  const auto rep = training::evaluate(ckpt.net, set, ckpt.config.augment, a.batch_size);

  json report = {{"checkpoint", ckpt.weights_path.string()},
                 {"weights_sha1", ckpt.sidecar.value("weights_sha1", "")},
                 {"dataset", data_dir},
                 {"split", a.split},
                 {"count", rep.count},
                 {"skipped", set.skipped},
                 {"accuracy",
                  {{"s3", rep.head_accuracy[0]},
                   {"s4", rep.head_accuracy[1]},
                   {"s5", rep.head_accuracy[2]},
                   {"concat", rep.head_accuracy[3]}}},
                 {"combined_accuracy", rep.combined_accuracy},
                 {"timestamp", utc_timestamp()}};
  std::cout << report.dump(2) << '\n';
  if (!a.report_path.empty()) write_json(a.report_path, report);

  if (!a.dump_path.empty()) {
    json rows = json::array();
    for (int64_t i = 0; i < rep.count; ++i) {
      json logits;
      for (auto h : model::kAllHeads) {
        auto v = rep.logits[i][static_cast<int64_t>(h)].to(torch::kFloat64).contiguous();
        logits[std::string(model::head_name(h))] = std::vector<double>(v.data_ptr<double>(), v.data_ptr<double>() + v.numel());
      }
      rows.push_back({{"path", set.paths[static_cast<std::size_t>(i)].string()},
                      {"label", set.labels[static_cast<std::size_t>(i)]},
                      {"logits", logits}});
    }
    write_json(a.dump_path, {{"heads", {"s3", "s4", "s5", "concat"}}, {"samples", rows}});
  }
  return kSuccess;
}

// ---------------------------------------------------------------- visualize

struct VisualizeArgs {
  std::string checkpoint_path;
  std::vector<std::string> images;
  std::string out_dir;
};

int cmd_visualize(const VisualizeArgs& a) {
  auto ckpt = checkpoint::load(a.checkpoint_path);
  const fs::path out = a.out_dir;
  fs::create_directories(out);
  const auto class_names = ckpt.sidecar.value("class_names", std::vector<std::string>{});

  int written = 0;
  int skipped = 0;
  for (const auto& path : a.images) {
    const auto image = data::read_image(path);
    if (image.empty()) {
      log::warn("skipping unreadable image {}", path);
      ++skipped;
      continue;
    }
    const auto art = viz::make_artifact(ckpt.net, image, ckpt.config.augment);
    const auto stem = fs::path(path).stem().string();
    cv::imwrite((out / (stem + "_input.png")).string(), art.input);
    json maps;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto tag = fmt::format("s{}", s + 3);
      cv::imwrite((out / fmt::format("{}_{}.png", stem, tag)).string(), viz::heatmap_to_gray(art.heatmaps[s]));
      cv::imwrite((out / fmt::format("{}_{}_overlay.png", stem, tag)).string(), art.overlays[s]);
      maps[tag] = fmt::format("{}_{}.png", stem, tag);
    }
    const auto cls = static_cast<std::size_t>(art.predicted_class);
    write_json(out / (stem + ".json"), {{"source", path},
                                        {"predicted_class", art.predicted_class},
                                        {"predicted_name", cls < class_names.size() ? class_names[cls] : ""},
                                        {"logits", art.logits},
                                        {"heatmaps", maps},
                                        {"heatmap_size", {art.input.rows, art.input.cols}}});
    ++written;
  }
  const json summary = {{"written", written}, {"skipped", skipped}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  if (written == 0 && skipped > 0) throw RuntimeFailure("no readable images");
  return kSuccess;
}

// ---------------------------------------------------------------- preview-shuffle

struct PreviewArgs {
  std::string input;
  std::string out;
  int grid = 4;
  int range = 1;
  uint64_t seed = 0;
};

int cmd_preview(const PreviewArgs& a) {
  const auto image = data::read_image(a.input);
  if (image.empty()) throw ConfigError("cannot read image " + a.input);
  const shuffle::ShuffleSpec spec{a.grid, a.range};
  Rng rng(a.seed);
  const auto result = shuffle::shuffle_image(data::mat_to_chw_u8(image), spec, rng);
  if (!cv::imwrite(a.out, data::chw_u8_to_mat(result.image))) throw RuntimeFailure("cannot write " + a.out);
  auto sidecar = fs::path(a.out).replace_extension(".json");
  write_json(sidecar, {{"input", a.input},
                       {"grid", a.grid},
                       {"range", spec.is_identity() ? 0 : a.range},
                       {"seed", a.seed},
                       {"order", "rows then columns"},
                       {"permutations", shuffle::to_json(result.pair)}});
  std::cout << sidecar.string() << '\n';
  return kSuccess;
}

// ---------------------------------------------------------------- gen-synth

int cmd_gen_synth(const data::SyntheticSpec& spec, const std::string& out) {
  const auto ds = data::generate_synthetic(spec, out);
  std::cout << json{{"root", out},
                    {"classes", ds.manifest.classes},
                    {"train", ds.manifest.train.size()},
                    {"test", ds.manifest.test.size()}}
                   .dump(2)
            << '\n';
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Fine-grained image classification with gradient attention and patch-shuffle training"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Progressive training with distillation");
  train->add_option("--config", ta.config_path, "JSON run config")->check(CLI::ExistingFile);
  train->add_option("--data", ta.data_dir, "Dataset root (train/ and test/ class folders)");
  train->add_option("--out", ta.out_dir, "Output directory");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_option("--seed", ta.seed);
  train->add_option("--set", ta.overrides, "Config override key.path=value (repeatable)");
  train->add_flag("--dry-run", ta.dry_run, "Resolve config, build the model, run one forward pass and exit");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Per-head and combined accuracy (no shuffling)");
  eval->add_option("--checkpoint", ea.checkpoint_path)->required();
  eval->add_option("--data", ea.data_dir)->required();
  eval->add_option("--split", ea.split);
  eval->add_option("--report", ea.report_path, "Write the JSON report here");
  eval->add_option("--dump-logits", ea.dump_path, "Write per-image logits as JSON");
  eval->add_option("--batch-size", ea.batch_size);

  VisualizeArgs va;
  auto* vis = app.add_subcommand("visualize", "Stage 3/4/5 attention heatmaps and overlays");
  vis->add_option("--checkpoint", va.checkpoint_path)->required();
  vis->add_option("--images", va.images)->required();
  vis->add_option("--out", va.out_dir)->required();

  PreviewArgs pa;
  auto* prev = app.add_subcommand("preview-shuffle", "Shuffle one image and record the permutations");
  prev->add_option("--input", pa.input)->required();
  prev->add_option("--grid", pa.grid)->required();
  prev->add_option("--range", pa.range)->required();
  prev->add_option("--seed", pa.seed);
  prev->add_option("--out", pa.out)->required();

  data::SyntheticSpec sa;
  std::string synth_out;
  auto* synth = app.add_subcommand("gen-synth", "Generate the synthetic fine-grained dataset");
  synth->add_option("--classes", sa.num_classes);
  synth->add_option("--size", sa.image_size);
  synth->add_option("--motif", sa.motif_size);
  synth->add_option("--train", sa.train_per_class, "Training images per class");
  synth->add_option("--test", sa.test_per_class, "Test images per class");
  synth->add_option("--noise", sa.noise);
  synth->add_option("--seed", sa.seed);
  synth->add_option("--out", synth_out)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (train->parsed()) return cmd_train(ta);
    if (eval->parsed()) return cmd_eval(ea);
    if (vis->parsed()) return cmd_visualize(va);
    if (prev->parsed()) return cmd_preview(pa);
    if (synth->parsed()) return cmd_gen_synth(sa, synth_out);
  } catch (const ConfigError& e) {
    log::error("{}", e.what());
    return kUsageError;
  } catch (const std::invalid_argument& e) {  // SpecError, DimensionError
    log::error("{}", e.what());
    return kUsageError;
  } catch (const UsageError& e) {
    log::error("{}", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    log::error("{}", e.what());
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace iagn::cli
