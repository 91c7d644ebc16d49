#include "iagn/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <string>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include "iagn/log.hpp"

#include "iagn/errors.hpp"

namespace iagn::training {

// ---------------------------------------------------------------- losses

double cross_entropy(std::span<const double> probs, int64_t label, bool* clamped) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw UsageError(fmt::format("cross_entropy: label {} out of range [0, {})", label, probs.size()));
  }
  double p = probs[static_cast<std::size_t>(label)];
  const bool clamp = p < kProbabilityEpsilon;
  if (clamp) {
    log::warn("cross_entropy: probability {} at label {} clamped to {}", p, label, kProbabilityEpsilon);
    p = kProbabilityEpsilon;
  }
  if (clamped) *clamped = clamp;
  return -std::log(p);
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  return torch::nll_loss(torch::log_softmax(logits, 1), labels.to(torch::kLong));
}

namespace {

std::vector<double> softened(std::span<const double> logits, double t) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp((logits[i] - mx) / t);
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

double kd_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double temperature) {
  if (student_logits.size() != teacher_logits.size() || student_logits.empty()) {
    throw DimensionError("kd_loss: student and teacher logits differ in length");
  }
  const auto ps = softened(student_logits, temperature);
  const auto pt = softened(teacher_logits, temperature);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (pt[i] > 0.0) kl += pt[i] * (std::log(pt[i]) - std::log(std::max(ps[i], kProbabilityEpsilon)));
  }
  return temperature * temperature * std::max(kl, 0.0);
}

torch::Tensor kd_loss(const torch::Tensor& student_logits, const torch::Tensor& teacher_logits, double temperature) {
  if (student_logits.sizes() != teacher_logits.sizes()) {
    throw DimensionError("kd_loss: student and teacher logits differ in shape");
  }
  auto log_ps = torch::log_softmax(student_logits / temperature, -1);
  auto log_pt = torch::log_softmax(teacher_logits.detach() / temperature, -1);
  auto kl = (log_pt.exp() * (log_pt - log_ps)).sum(-1);
  return temperature * temperature * kl.mean();
}

// ---------------------------------------------------------------- schedule

TrainSchedule TrainSchedule::standard() {
  return {{{1, 1, Head::kConcat, std::nullopt, true},
           {2, 1, Head::kS5, Head::kConcat, true},
           {4, 1, Head::kS4, Head::kS5, true},
           {8, 1, Head::kS3, Head::kS4, true}}};
}

void TrainSchedule::validate() const {
  if (steps.empty()) throw SpecError("schedule needs at least one step");
  std::set<Head> supervised;
  int prev = 0;
  for (const auto& s : steps) {
    shuffle::ShuffleSpec{s.scale, s.range}.validate();
    if (s.scale < prev) throw SpecError("schedule scales must be non-decreasing");
    prev = s.scale;
    if (!supervised.insert(s.supervised).second) {
      throw SpecError(fmt::format("head {} is supervised by more than one step", model::head_name(s.supervised)));
    }
    if (s.teacher && *s.teacher == s.supervised) throw SpecError("a head cannot distill from itself");
  }
}

int TrainSchedule::max_scale() const {
  int m = 1;
  for (const auto& s : steps) m = std::max(m, s.scale);
  return m;
}

void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = nlohmann::json::array();
  for (const auto& st : s.steps) {
    j.push_back({{"scale", st.scale},
                 {"range", st.range},
                 {"head", model::head_name(st.supervised)},
                 {"teacher", st.teacher ? nlohmann::json(model::head_name(*st.teacher)) : nlohmann::json(nullptr)},
                 {"use_attention", st.use_attention}});
  }
}

void from_json(const nlohmann::json& j, TrainSchedule& s) {
  s.steps.clear();
  for (const auto& e : j) {
    ScheduleStep st;
    st.scale = e.value("scale", 1);
    st.range = e.value("range", 1);
    st.supervised = model::parse_head(e.at("head").get<std::string>());
    if (e.contains("teacher") && !e.at("teacher").is_null()) st.teacher = model::parse_head(e.at("teacher").get<std::string>());
    st.use_attention = e.value("use_attention", true);
    s.steps.push_back(st);
  }
}

void OptimConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(min_learning_rate >= 0.0)) throw ConfigError("optim: learning rates must be >= 0");
  if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("optim: momentum and weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("optim.epochs must be >= 0");
  if (kd_temperature < 1.0) throw ConfigError("optim.kd_temperature must be >= 1");
  if (kd_weight < 0.0) throw ConfigError("optim.kd_weight must be >= 0");
  if (eval_every < 1) throw ConfigError("optim.eval_every must be >= 1");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"min_learning_rate", c.min_learning_rate},
       {"momentum", c.momentum},           {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},       {"epochs", c.epochs},
       {"kd_temperature", c.kd_temperature}, {"kd_weight", c.kd_weight},
       {"eval_every", c.eval_every},       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.min_learning_rate = j.value("min_learning_rate", c.min_learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.kd_temperature = j.value("kd_temperature", c.kd_temperature);
  c.kd_weight = j.value("kd_weight", c.kd_weight);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
}

double cosine_learning_rate(const OptimConfig& c, int epoch) {
  if (c.epochs <= 0) return c.learning_rate;
  const double t = static_cast<double>(epoch) / c.epochs;
  return c.min_learning_rate + 0.5 * (c.learning_rate - c.min_learning_rate) * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainConfig::validate() const {
  model.validate();
  optim.validate();
  schedule.validate();
  augment.validate();
  if (augment.crop != model.input_size) {
    throw ConfigError(fmt::format("augment.crop ({}) must equal model.input_size ({})", augment.crop, model.input_size));
  }
  if (augment.crop % schedule.max_scale() != 0) {
    throw ConfigError(fmt::format("augment.crop ({}) must be a multiple of the largest shuffle scale ({})", augment.crop,
                                  schedule.max_scale()));
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model}, {"optim", c.optim}, {"schedule", c.schedule}, {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("optim")) j.at("optim").get_to(c.optim);
  if (j.contains("schedule")) j.at("schedule").get_to(c.schedule);
  if (j.contains("augment")) j.at("augment").get_to(c.augment);
}

// ---------------------------------------------------------------- shuffling

namespace {
std::atomic<int64_t> g_shuffle_calls{0};

Rng derived_rng(uint64_t seed, int epoch, std::size_t sample, uint64_t stream) {
  std::seed_seq seq{seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(sample), stream};
  return Rng(seq);
}
}  // namespace

torch::Tensor shuffle_batch(const torch::Tensor& images, const shuffle::ShuffleSpec& spec, std::span<Rng> rngs) {
  ++g_shuffle_calls;
  spec.validate();
  if (images.dim() != 4 || static_cast<std::size_t>(images.size(0)) != rngs.size()) {
    throw DimensionError("shuffle_batch: need (B, C, H, W) images and one random source per image");
  }
  if (spec.is_identity()) return images;
  std::vector<torch::Tensor> out;
  out.reserve(rngs.size());
  for (int64_t b = 0; b < images.size(0); ++b) {
    out.push_back(shuffle::shuffle_image(images[b], spec, rngs[static_cast<std::size_t>(b)]).image);
  }
  return torch::stack(out);
}

int64_t shuffle_call_count() { return g_shuffle_calls.load(); }
void reset_shuffle_call_count() { g_shuffle_calls = 0; }

// ---------------------------------------------------------------- trainer

StepTensors step_losses(const model::StageOutputs& out, const torch::Tensor& labels, const ScheduleStep& step,
                        const OptimConfig& optim) {
  StepTensors t;
  t.ce = cross_entropy(out.head(step.supervised), labels);
  if (step.teacher) {
    t.kd = kd_loss(out.head(step.supervised), out.head(*step.teacher).detach(), optim.kd_temperature);
    t.total = t.ce + optim.kd_weight * t.kd;
  } else {
    t.kd = torch::zeros({}, t.ce.options());
    t.total = t.ce;
  }
  return t;
}

Trainer::Trainer(model::IagnNet net, TrainConfig config)
    : net_(std::move(net)),
      config_(std::move(config)),
      optimizer_(net_->parameters(), torch::optim::SGDOptions(config_.optim.learning_rate)
                                         .momentum(config_.optim.momentum)
                                         .weight_decay(config_.optim.weight_decay)) {}

void Trainer::set_learning_rate(double lr) {
  for (auto& group : optimizer_.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
}

StepLoss Trainer::progressive_step(const torch::Tensor& images, const torch::Tensor& labels, const ScheduleStep& step,
                                   std::span<Rng> shuffle_rngs, std::span<const std::size_t> sample_ids) {
  const shuffle::ShuffleSpec spec{step.scale, step.range};
  if (observer_) observer_(spec);
  auto inputs = shuffle_batch(images, spec, shuffle_rngs);

  net_->train();
  model::ForwardOptions opts;
  opts.use_attention = step.use_attention;
  opts.targets = labels;
  auto out = net_->forward(inputs, opts);
  auto losses = step_losses(out, labels, step, config_.optim);

  const double total = losses.total.item<double>();
  if (!std::isfinite(total)) {
    throw RuntimeFailure(fmt::format("non-finite loss at scale {} head {}; batch sample ids: [{}]", step.scale,
                                     model::head_name(step.supervised), fmt::join(sample_ids, ", ")));
  }
  optimizer_.zero_grad();
  losses.total.backward();
  optimizer_.step();
  ++updates_;

  return {step.scale, step.supervised, losses.ce.item<double>(), losses.kd.item<double>(), total,
          out.head(step.supervised).detach()};
}

LossRecord Trainer::train_batch(const torch::Tensor& images, const torch::Tensor& labels,
                                std::span<const std::size_t> sample_ids, int epoch, int batch) {
  LossRecord rec{epoch, batch, {}};
  const auto& steps = config_.schedule.steps;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    std::vector<Rng> rngs;
    rngs.reserve(sample_ids.size());
    for (auto id : sample_ids) rngs.push_back(derived_rng(config_.optim.seed, epoch, id, 0x100 + s));
    rec.steps.push_back(progressive_step(images, labels, steps[s], rngs, sample_ids));
  }
  return rec;
}

EvalReport evaluate(model::IagnNet& net, const data::ImageSet& set, const data::AugmentPolicy& policy, int batch_size,
                    bool use_attention) {
  net->eval();
  EvalReport report;
  report.count = static_cast<int64_t>(set.size());
  if (set.size() == 0) return report;

  std::vector<torch::Tensor> logits;
  for (std::size_t start = 0; start < set.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx(std::min(static_cast<std::size_t>(batch_size), set.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto out = net->infer(data::eval_batch(set, idx, policy), use_attention);
    logits.push_back(torch::stack({out.head(Head::kS3), out.head(Head::kS4), out.head(Head::kS5), out.head(Head::kConcat)}, 1));
  }
  report.logits = torch::cat(logits, 0);
  report.labels = torch::tensor(set.labels, torch::kLong);
  for (auto h : model::kAllHeads) {
    auto pred = report.logits.select(1, static_cast<int64_t>(h)).argmax(1);
    report.head_accuracy[static_cast<std::size_t>(h)] = pred.eq(report.labels).to(torch::kDouble).mean().item<double>();
  }
  auto combined = report.logits.sum(1).argmax(1);
  report.combined_accuracy = combined.eq(report.labels).to(torch::kDouble).mean().item<double>();
  return report;
}

model::IagnNet clone_net(model::IagnNet& net) {
  model::IagnNet copy(net->config());
  torch::NoGradGuard guard;
  auto src_params = net->named_parameters();
  for (auto& p : copy->named_parameters()) p.value().copy_(src_params[p.key()]);
  auto src_buffers = net->named_buffers();
  for (auto& b : copy->named_buffers()) b.value().copy_(src_buffers[b.key()]);
  copy->train(net->is_training());
  return copy;
}

TrainResult train(const data::ImageSet& train_set, const data::ImageSet& test_set, int64_t dataset_classes,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (train_set.size() == 0) throw ConfigError("training split is empty");
  if (dataset_classes != config.model.num_classes) {
    throw ConfigError(fmt::format("dataset has {} classes but model.num_classes is {}", dataset_classes,
                                  config.model.num_classes));
  }

  torch::manual_seed(config.optim.seed);
  TrainResult result;
  Trainer trainer(model::IagnNet(config.model), config);
  auto& net = trainer.net();
  result.last = net;

  const auto bs = static_cast<std::size_t>(config.optim.batch_size);
  for (int epoch = 0; epoch < config.optim.epochs; ++epoch) {
    const double lr = cosine_learning_rate(config.optim, epoch);
    trainer.set_learning_rate(lr);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    auto order_rng = derived_rng(config.optim.seed, epoch, 0, 0x0dde);
    std::shuffle(order.begin(), order.end(), order_rng);

    EpochMetrics m;
    m.epoch = epoch;
    m.learning_rate = lr;
    const auto n_steps = config.schedule.steps.size();
    m.step_ce.assign(n_steps, 0.0);
    m.step_kd.assign(n_steps, 0.0);
    m.step_total.assign(n_steps, 0.0);
    int batches = 0;

    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto end = std::min(order.size(), start + bs);
      std::span<const std::size_t> ids(order.data() + start, end - start);
      std::vector<torch::Tensor> images;
      std::vector<int64_t> labels;
      for (auto id : ids) {
        auto aug_rng = derived_rng(config.optim.seed, epoch, id, 0xa0);
        images.push_back(data::image_to_tensor(data::standard_augment(train_set.images[id], true, aug_rng, config.augment)));
        labels.push_back(train_set.labels[id]);
      }
      auto rec = trainer.train_batch(torch::stack(images), torch::tensor(labels, torch::kLong), ids, epoch, batches);
      for (std::size_t s = 0; s < n_steps; ++s) {
        m.step_ce[s] += rec.steps[s].ce;
        m.step_kd[s] += rec.steps[s].kd;
        m.step_total[s] += rec.steps[s].total;
      }
      for (auto& s : rec.steps) s.supervised_logits = torch::Tensor();
      result.batch_losses.push_back(std::move(rec));
      ++batches;
    }
    for (std::size_t s = 0; s < n_steps; ++s) {
      m.step_ce[s] /= batches;
      m.step_kd[s] /= batches;
      m.step_total[s] /= batches;
    }

    bool is_best = false;
    const bool last_epoch = epoch + 1 == config.optim.epochs;
    if (test_set.size() > 0 && ((epoch + 1) % config.optim.eval_every == 0 || last_epoch)) {
      m.eval = evaluate(net, test_set, config.augment);
      if (m.eval->combined_accuracy > result.best_combined_accuracy) {
        result.best_combined_accuracy = m.eval->combined_accuracy;
        result.best_epoch = epoch;
        result.best = clone_net(net);
        is_best = true;
      }
      log::info("epoch {:3d} lr {:.4f} loss [{:.3f}] acc s3 {:.3f} s4 {:.3f} s5 {:.3f} concat {:.3f} combined {:.3f}",
                   epoch, lr, fmt::join(m.step_total, ", "), m.eval->head_accuracy[0], m.eval->head_accuracy[1],
                   m.eval->head_accuracy[2], m.eval->head_accuracy[3], m.eval->combined_accuracy);
    } else {
      log::info("epoch {:3d} lr {:.4f} loss [{:.3f}]", epoch, lr, fmt::join(m.step_total, ", "));
    }
    if (callbacks.on_epoch) callbacks.on_epoch(m, is_best, trainer);
    result.history.push_back(std::move(m));
  }
  if (!result.best) result.best = clone_net(net);
  return result;
}

}  // namespace iagn::training
