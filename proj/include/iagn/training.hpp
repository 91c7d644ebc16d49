#pragma once

// Progressive multi-step training: every batch is consumed once per schedule
// step, each step shuffling at its own scale, supervising one head with
// cross-entropy and distilling from the previous step's head.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "iagn/data.hpp"
#include "iagn/model.hpp"
#include "iagn/patch_shuffle.hpp"

namespace iagn::training {

using model::Head;

// ---------------------------------------------------------------- losses

inline constexpr double kProbabilityEpsilon = 1e-12;

/// -log(probs[label]) for a probability vector. A zero probability is
/// clamped to kProbabilityEpsilon and reported through `clamped`.
double cross_entropy(std::span<const double> probs, int64_t label, bool* clamped = nullptr);

/// Batch-mean cross-entropy of softmax(logits) against integer labels.
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

/// T^2 * KL(softmax(teacher/T) || softmax(student/T)).
double kd_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double temperature);

/// Batched version, averaged over the batch. The teacher is detached.
torch::Tensor kd_loss(const torch::Tensor& student_logits, const torch::Tensor& teacher_logits, double temperature);

// ---------------------------------------------------------------- schedule

struct ScheduleStep {
  int scale = 1;                // shuffle grid N; 1 means original images
  int range = 1;                // shuffle neighbourhood k, ignored for scale 1
  Head supervised = Head::kConcat;
  std::optional<Head> teacher;  // distillation source, same forward pass
  bool use_attention = true;
};

struct TrainSchedule {
  std::vector<ScheduleStep> steps;

  /// (1, concat) -> (2, s5 <- concat) -> (4, s4 <- s5) -> (8, s3 <- s4).
  static TrainSchedule standard();
  /// Throws SpecError for decreasing scales, a repeated supervised head, a
  /// self-teaching step or an invalid shuffle range.
  void validate() const;
  int max_scale() const;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

struct OptimConfig {
  double learning_rate = 0.01;
  double min_learning_rate = 0.0;  // cosine annealing floor
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 16;
  int epochs = 30;
  double kd_temperature = 4.0;
  double kd_weight = 0.5;
  int eval_every = 1;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

double cosine_learning_rate(const OptimConfig& c, int epoch);

// ---------------------------------------------------------------- records

struct StepLoss {
  int scale = 1;
  Head head = Head::kConcat;
  double ce = 0.0;
  double kd = 0.0;
  double total = 0.0;
  torch::Tensor supervised_logits;  // detached, from this step's forward
};

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  std::vector<StepLoss> steps;
};

struct EvalReport {
  std::array<double, 4> head_accuracy{};  // indexed by Head
  double combined_accuracy = 0.0;
  int64_t count = 0;
  torch::Tensor logits;  // (N, 4, num_classes), heads in Head order
  torch::Tensor labels;  // (N)
};

struct EpochMetrics {
  int epoch = 0;
  double learning_rate = 0.0;
  std::vector<double> step_ce;  // mean over batches, one per schedule step
  std::vector<double> step_kd;
  std::vector<double> step_total;
  std::optional<EvalReport> eval;
};

// ---------------------------------------------------------------- shuffling

/// Shuffles every image of a (B, C, H, W) batch with its own random source.
/// Each call bumps a process-wide counter (see shuffle_call_count).
torch::Tensor shuffle_batch(const torch::Tensor& images, const shuffle::ShuffleSpec& spec, std::span<Rng> rngs);
int64_t shuffle_call_count();
void reset_shuffle_call_count();

// ---------------------------------------------------------------- trainer

struct TrainConfig {
  model::BackboneConfig model;
  OptimConfig optim;
  TrainSchedule schedule = TrainSchedule::standard();
  data::AugmentPolicy augment;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepTensors {
  torch::Tensor ce;
  torch::Tensor kd;  // zero scalar when the step has no teacher
  torch::Tensor total;
};

/// CE on the step's supervised head plus kd_weight * KD from its teacher.
StepTensors step_losses(const model::StageOutputs& out, const torch::Tensor& labels, const ScheduleStep& step,
                        const OptimConfig& optim);

class Trainer {
 public:
  Trainer(model::IagnNet net, TrainConfig config);

  /// One schedule step on one batch: shuffle at the step's scale, forward,
  /// CE (+ KD), backward, one optimizer update. Throws RuntimeFailure on a
  /// non-finite loss, naming `sample_ids`.
  StepLoss progressive_step(const torch::Tensor& images, const torch::Tensor& labels, const ScheduleStep& step,
                            std::span<Rng> shuffle_rngs, std::span<const std::size_t> sample_ids = {});

  /// Runs every schedule step on the batch in order. Shuffle sources derive
  /// from (seed, epoch, sample id, step).
  LossRecord train_batch(const torch::Tensor& images, const torch::Tensor& labels,
                         std::span<const std::size_t> sample_ids, int epoch, int batch);

  void set_learning_rate(double lr);
  int64_t optimizer_updates() const { return updates_; }

  /// Called with the shuffle spec of every progressive step, in order.
  void set_shuffle_observer(std::function<void(const shuffle::ShuffleSpec&)> observer) {
    observer_ = std::move(observer);
  }

  model::IagnNet& net() { return net_; }
  torch::optim::SGD& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

 private:
  model::IagnNet net_;
  TrainConfig config_;
  torch::optim::SGD optimizer_;
  int64_t updates_ = 0;
  std::function<void(const shuffle::ShuffleSpec&)> observer_;
};

/// Evaluation without any shuffling: center-cropped images, two-pass
/// attention inference, per-head and combined accuracy.
EvalReport evaluate(model::IagnNet& net, const data::ImageSet& set, const data::AugmentPolicy& policy,
                    int batch_size = 32, bool use_attention = true);

struct TrainResult {
  model::IagnNet last{nullptr};
  model::IagnNet best{nullptr};
  int best_epoch = -1;
  double best_combined_accuracy = -1.0;
  std::vector<EpochMetrics> history;
  std::vector<LossRecord> batch_losses;
};

struct TrainCallbacks {
  // After every epoch; `is_best` marks a new best combined accuracy.
  std::function<void(const EpochMetrics&, bool is_best, Trainer&)> on_epoch;
};

/// Full training run. Throws ConfigError for an empty split or a class-count
/// mismatch before any compute.
TrainResult train(const data::ImageSet& train_set, const data::ImageSet& test_set, int64_t dataset_classes,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

/// Deep copy of a network's parameters and buffers into a fresh instance.
model::IagnNet clone_net(model::IagnNet& net);

}  // namespace iagn::training
