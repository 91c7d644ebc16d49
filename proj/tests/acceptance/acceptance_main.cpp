// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
//
//   iagn_acceptance [--work-dir DIR] [--epochs N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "iagn/checkpoint.hpp"
#include "iagn/data.hpp"
#include "iagn/ia_block.hpp"
#include "iagn/model.hpp"
#include "iagn/patch_shuffle.hpp"
#include "iagn/run_config.hpp"
#include "iagn/training.hpp"
#include "iagn/visualize.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace iagn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

Outcome permutation_properties() {
  const auto t0 = Clock::now();
  const std::vector<std::pair<int, int>> cases = {{2, 1}, {4, 1}, {4, 2}, {4, 3}, {8, 1}, {8, 4}, {8, 7}};
  int64_t violations = 0;
  int64_t draws = 0;
  for (const auto& [n, k] : cases) {
    Rng rng(1000 + n * 10 + k);
    const auto ids = testing::patch_id_image(n);
    for (int t = 0; t < 10000; ++t) {
      auto res = shuffle::shuffle_image(ids, {n, k}, rng);
      ++draws;
      // Read patch origins from the pixels rather than from the permutations.
      auto acc = res.image.accessor<int64_t, 2>();
      std::vector<char> seen(static_cast<std::size_t>(n * n), 0);
      bool bad = false;
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          const auto id = acc[r][c];
          if (id < 0 || id >= n * n || seen[static_cast<std::size_t>(id)]) {
            bad = true;
            continue;
          }
          seen[static_cast<std::size_t>(id)] = 1;
          if (std::abs(id / n - r) > 2 * k || std::abs(id % n - c) > 2 * k) bad = true;
        }
      }
      for (const auto& p : res.pair.row_perms) bad |= !shuffle::is_bijection(p);
      for (const auto& p : res.pair.col_perms) bad |= !shuffle::is_bijection(p);
      violations += bad;
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 60.0,
          fmt::format("{} shuffles over 7 (N,k) pairs, {} violations, {:.1f} s", draws, violations, secs)};
}

// ---------------------------------------------------------------- 2

Outcome gradient_oracle() {
  auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  double worst = 0.0;
  int checked = 0;
  for (int probe = 0; probe < 16; ++probe) {
    torch::manual_seed(500 + probe);
    const int64_t c = 4;
    // Stage 1 maps a (3, 3, 3) input to the (C, 3, 3) features under test;
    // stage 2 (conv -> tanh -> mean pool -> linear) produces class scores.
    auto x = torch::randn({1, 3, 3, 3}, f64);
    auto w1 = torch::randn({c, 3, 3, 3}, f64) * 0.4;
    auto features = torch::tanh(torch::conv2d(x, w1, {}, 1, 1));
    auto w2 = torch::randn({6, c, 3, 3}, f64) * 0.4;
    auto fc = torch::randn({3, 6}, f64);
    auto stage2 = [&](const torch::Tensor& f) {
      auto h = torch::tanh(torch::conv2d(f, w2, {}, 1, 1));
      return torch::matmul(h.mean({-2, -1}), fc.t());
    };
    const int64_t cls = probe % 3;
    auto got = ia::ia_forward(features, stage2, torch::tensor({cls}, torch::kLong)).importance[0];
    auto fd = testing::fd_channel_importance(
        [&](const torch::Tensor& f) { return stage2(f.unsqueeze(0))[0][cls].item<double>(); }, features[0], 1e-3);
    for (int64_t ch = 0; ch < c; ++ch) {
      const double a = got[ch].item<double>();
      const double b = fd[static_cast<std::size_t>(ch)];
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(b), 1e-12));
      ++checked;
    }
  }
  return {worst <= 1e-2, fmt::format("16 probes, {} channel values, max relative error {:.2e}", checked, worst)};
}

// ---------------------------------------------------------------- 3

Outcome attention_algebra() {
  auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  torch::manual_seed(77);
  double sum_err = 0.0, hull_excess = 0.0, shift_err = 0.0, grad_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int64_t c = 1 + t % 6, u = 2 + t % 4;
    auto f = torch::randn({c, u, u}, f64) * 3.0;
    auto alpha = torch::randn({c}, f64) * 2.0;
    sum_err = std::max(sum_err, (ia::channel_weights(alpha).sum() - 1.0).abs().item<double>());

    auto a = ia::attention_map(alpha, f);
    auto above = (a - std::get<0>(f.max(0))).clamp_min(0.0).max().item<double>();
    auto below = (std::get<0>(f.min(0)) - a).clamp_min(0.0).max().item<double>();
    hull_excess = std::max({hull_excess, above, below});

    const double shift = 10.0 * (t % 7) - 30.0;
    shift_err = std::max(shift_err, (ia::attention_map(alpha + shift, f) - a).abs().max().item<double>());

    auto feat = torch::randn({1, c, u, u}, f64).requires_grad_(true);
    auto w = torch::randn({3, c}, f64);
    ia::ScoreFn score = [&](const torch::Tensor& x) { return torch::matmul((x * x).mean({-2, -1}), w.t()); };
    auto r = ia::ia_forward(feat, score, torch::tensor({t % 3}, torch::kLong));
    r.enhanced.sum().backward();
    auto expected = (r.attention.unsqueeze(1) * r.importance.unsqueeze(-1).unsqueeze(-1)).expand_as(feat);
    grad_err = std::max(grad_err, (feat.grad() - expected).abs().max().item<double>());
  }
  const double tol = 1e-5;
  return {sum_err <= tol && hull_excess <= tol && shift_err <= tol && grad_err <= tol,
          fmt::format("100 tensors each: softmax sum err {:.1e}, hull excess {:.1e}, shift err {:.1e}, "
                      "dF_hat/dF err {:.1e}",
                      sum_err, hull_excess, shift_err, grad_err)};
}

// ---------------------------------------------------------------- 4

Outcome loss_oracles() {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  double ce_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(static_cast<std::size_t>(2 + t % 9));
    double s = 0.0;
    for (auto& v : p) s += v = u(rng);
    for (auto& v : p) v /= s;
    const auto label = static_cast<int64_t>(t % static_cast<int>(p.size()));
    ce_err = std::max(ce_err, std::abs(training::cross_entropy(p, label) - testing::literal_cross_entropy(p, label)));
  }
  double uniform_err = 0.0;
  for (int c : {2, 4, 10, 200}) {
    const std::vector<double> p(static_cast<std::size_t>(c), 1.0 / c);
    uniform_err = std::max(uniform_err, std::abs(training::cross_entropy(p, 0) - std::log(c)));
  }
  double kd_same = 0.0;
  std::normal_distribution<double> n(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> z(4);
    for (auto& v : z) v = n(rng);
    kd_same = std::max(kd_same, training::kd_loss(z, z, 4.0));
  }
  return {ce_err <= 1e-6 && uniform_err <= 1e-6 && kd_same < 1e-7,
          fmt::format("CE vs literal loop max err {:.1e} (100 cases), uniform vs ln C err {:.1e}, KD(s=t) max {:.1e}",
                      ce_err, uniform_err, kd_same)};
}

// ---------------------------------------------------------------- 5

Outcome training_mechanics(const data::ImageSet& test_set) {
  training::TrainConfig cfg;
  torch::manual_seed(5);
  training::Trainer trainer(model::IagnNet(cfg.model), cfg);
  std::vector<int> scales;
  trainer.set_shuffle_observer([&](const shuffle::ShuffleSpec& s) { scales.push_back(s.grid); });
  training::reset_shuffle_call_count();
  const std::vector<std::size_t> ids = {0, 1, 2, 3};
  trainer.train_batch(torch::randn({4, 3, 64, 64}), torch::tensor({0, 1, 2, 3}, torch::kLong), ids, 0, 0);
  const auto updates = trainer.optimizer_updates();
  const auto train_calls = training::shuffle_call_count();

  training::reset_shuffle_call_count();
  training::evaluate(trainer.net(), test_set, cfg.augment);
  const auto eval_calls = training::shuffle_call_count();

  const bool order_ok = scales == std::vector<int>{1, 2, 4, 8};
  return {updates == 4 && order_ok && eval_calls == 0 && train_calls == 4,
          fmt::format("updates per batch {}, scales [{}], shuffle hook calls: training {}, evaluation {}", updates,
                      fmt::join(scales, ","), train_calls, eval_calls)};
}

// ---------------------------------------------------------------- 6, 7

struct TrainedRun {
  training::TrainResult result;
  training::EvalReport final_eval;
  double seconds = 0.0;
};

Outcome end_to_end(const TrainedRun& run, int epochs) {
  const auto& e = run.final_eval;
  const double combined = e.combined_accuracy;
  const double concat = e.head_accuracy[3];
  return {combined >= 0.90 && combined >= concat - 0.02 && run.seconds <= 20 * 60 && epochs <= 30,
          fmt::format("{} epochs in {:.0f} s; final model: combined {:.3f}, concat {:.3f}, s3 {:.3f}, s4 {:.3f}, "
                      "s5 {:.3f}",
                      epochs, run.seconds, combined, concat, e.head_accuracy[0], e.head_accuracy[1],
                      e.head_accuracy[2])};
}

Outcome median_loss_property(const TrainedRun& run) {
  const auto& h = run.result.history;
  if (h.size() < 2) return {false, "fewer than 2 epochs"};
  auto total = [](const training::EpochMetrics& m) {
    double s = 0.0;
    for (double v : m.step_total) s += v;
    return s;
  };
  std::vector<double> first;
  for (std::size_t i = 1; i < std::min<std::size_t>(10, h.size()); ++i) first.push_back(total(h[i]));
  std::sort(first.begin(), first.end());
  const double median = first.size() % 2 ? first[first.size() / 2]
                                         : 0.5 * (first[first.size() / 2 - 1] + first[first.size() / 2]);
  return {median < total(h[0]),
          fmt::format("epoch-0 summed step loss {:.4f}, median over epochs 1-{} {:.4f}", total(h[0]), first.size(),
                      median)};
}

Outcome attention_localization(model::IagnNet& net, const data::DatasetManifest& manifest,
                               const std::map<std::string, data::Box>& boxes, const data::AugmentPolicy& policy) {
  double mass_sum = 0.0, baseline_sum = 0.0;
  int n = 0;
  net->eval();
  for (const auto& s : manifest.test) {
    const auto rel = fs::relative(s.path, manifest.root).generic_string();
    const auto it = boxes.find(rel);
    if (it == boxes.end()) continue;
    const auto image = data::read_image(s.path);
    const auto art = viz::make_artifact(net, image, policy);
    const auto box = data::map_box_eval(it->second, image.cols, image.rows, policy);
    mass_sum += viz::attention_mass(art.heatmaps[0], box);
    baseline_sum += static_cast<double>(box.w * box.h) / (art.input.cols * art.input.rows);
    ++n;
  }
  if (n == 0) return {false, "no annotated test images"};
  const double mass = mass_sum / n, baseline = baseline_sum / n;
  return {mass >= 3.0 * baseline,
          fmt::format("{} test images: mean stage-3 mass in motif box {:.4f}, uniform baseline {:.4f}, ratio {:.2f}", n,
                      mass, baseline, mass / baseline)};
}

// ---------------------------------------------------------------- 8

Outcome full_scale_config() {
  const auto path = fs::path(IAGN_SOURCE_DIR) / "configs" / "full_scale.json";
  auto rc = config::resolve(config::read_json_file(path));
  const auto& t = rc.train;
  const bool values_ok = t.model.kind == "resnet50" && t.augment.resize == 512 && t.augment.crop == 448 &&
                         t.model.input_size == 448 && t.optim.batch_size == 10 && t.optim.epochs == 150 &&
                         t.optim.momentum == 0.9 && t.optim.weight_decay == 5e-4 &&
                         std::abs(training::cosine_learning_rate(t.optim, 75) - 0.5 * t.optim.learning_rate) < 1e-12;
  // Start: build the model and take one optimizer step on a small random batch.
  const auto t0 = Clock::now();
  torch::manual_seed(t.optim.seed);
  training::Trainer trainer(model::IagnNet(t.model), t);
  std::vector<Rng> rngs{Rng(1), Rng(2)};
  auto images = torch::randn({2, 3, 448, 448});
  auto labels = torch::tensor({0, 199}, torch::kLong);
  auto rec = trainer.progressive_step(images, labels, t.schedule.steps[0], rngs);
  const bool started = trainer.optimizer_updates() == 1 && std::isfinite(rec.total);
  return {values_ok && started,
          fmt::format("parsed {} ({} {}->{}, batch {}, {} epochs, momentum {}, wd {}, cosine); first step loss {:.3f} "
                      "in {:.0f} s",
                      path.filename().string(), t.model.kind, t.augment.resize, t.augment.crop, t.optim.batch_size,
                      t.optim.epochs, t.optim.momentum, t.optim.weight_decay, rec.total, seconds_since(t0))};
}

// ---------------------------------------------------------------- 9

Outcome determinism(const data::ImageSet& train_set, const data::ImageSet& test_set, int64_t classes) {
  training::TrainConfig cfg;
  cfg.optim.epochs = 1;
  auto a = training::train(train_set, test_set, classes, cfg);
  auto b = training::train(train_set, test_set, classes, cfg);
  bool losses_equal = a.batch_losses.size() == b.batch_losses.size();
  for (std::size_t i = 0; losses_equal && i < a.batch_losses.size(); ++i) {
    for (std::size_t s = 0; s < a.batch_losses[i].steps.size(); ++s) {
      const auto& x = a.batch_losses[i].steps[s];
      const auto& y = b.batch_losses[i].steps[s];
      losses_equal &= x.ce == y.ce && x.kd == y.kd && x.total == y.total;
    }
  }
  const auto& ea = *a.history.at(0).eval;
  const auto& eb = *b.history.at(0).eval;
  const bool eval_equal = torch::equal(ea.logits, eb.logits) && ea.head_accuracy == eb.head_accuracy &&
                          ea.combined_accuracy == eb.combined_accuracy;
  auto ra = training::evaluate(a.last, test_set, cfg.augment);
  auto rb = training::evaluate(b.last, test_set, cfg.augment);
  const bool reeval_equal = torch::equal(ra.logits, rb.logits) && torch::equal(ra.logits, ea.logits);
  return {losses_equal && eval_equal && reeval_equal,
          fmt::format("{} epoch-0 batch records compared: losses {}, eval reports {}, repeated eval {}",
                      a.batch_losses.size(), losses_equal ? "identical" : "DIFFER", eval_equal ? "identical" : "DIFFER",
                      reeval_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "iagn_acceptance";
  int epochs = 30;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--epochs" && i + 1 < argc) {
      epochs = std::stoi(argv[++i]);
    } else {
      std::cerr << "usage: iagn_acceptance [--work-dir DIR] [--epochs N]\n";
      return 1;
    }
  }
  torch::set_num_threads(std::max(1u, std::thread::hardware_concurrency()));

  int failed = 0;
  auto report = [&](const std::string& id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << "  " << name << ": " << o.detail << std::endl;
  };

  report("1", "permutation bijectivity and 2k bound", permutation_properties);
  report("2", "channel importance vs finite differences", gradient_oracle);
  report("3", "attention algebra", attention_algebra);
  report("4", "cross-entropy and distillation oracles", loss_oracles);

  // Synthetic dataset shared by the remaining criteria.
  const auto synth_root = work / "synth";
  fs::remove_all(synth_root);
  fs::create_directories(work);
  data::SyntheticSpec spec;  // 4 classes, 64 px, motif 8, 100/50 per class, seed 7
  const auto synth = data::generate_synthetic(spec, synth_root);
  const auto train_set = data::load_split(synth.manifest.train);
  const auto test_set = data::load_split(synth.manifest.test);
  std::cout << fmt::format("      synthetic set: {} train / {} test images, {} classes", train_set.size(),
                           test_set.size(), synth.manifest.num_classes())
            << std::endl;

  report("5", "progressive step mechanics", [&] { return training_mechanics(test_set); });

  TrainedRun run;
  training::TrainConfig cfg;
  cfg.optim.epochs = epochs;
  {
    const auto t0 = Clock::now();
    run.result = training::train(train_set, test_set, synth.manifest.num_classes(), cfg);
    run.seconds = seconds_since(t0);
    run.final_eval = training::evaluate(run.result.last, test_set, cfg.augment);
    checkpoint::CheckpointInfo info;
    info.epoch = epochs - 1;
    info.class_names = synth.manifest.classes;
    info.history = run.result.history;
    checkpoint::save(work, "acceptance_final", run.result.last, nullptr, cfg, info);
  }
  report("6", "end-to-end desk training", [&] { return end_to_end(run, epochs); });
  report("6b", "median epoch loss (epochs 1-9) below epoch 0", [&] { return median_loss_property(run); });
  report("7", "stage-3 attention localization", [&] {
    return attention_localization(run.result.last, synth.manifest, synth.motif_boxes, cfg.augment);
  });
  report("8", "full-scale config parse-and-start", full_scale_config);
  report("9", "determinism", [&] { return determinism(train_set, test_set, synth.manifest.num_classes()); });

  std::cout << (failed == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failed)) << std::endl;
  return failed == 0 ? 0 : 1;
}
