#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nvs/autodiff/ops.hpp"
#include "nvs/autodiff/optim.hpp"
#include "nvs/checkpoint.hpp"
#include "nvs/dataset.hpp"
#include "nvs/error.hpp"
#include "nvs/loss.hpp"
#include "nvs/model.hpp"
#include "nvs/render.hpp"
#include "nvs/rng.hpp"

namespace nvs {

// How the base view is chosen for each training sample.
struct BasePolicy {
  bool fixed = false;
  int id = 0;

  static BasePolicy parse(std::string_view s) {
    if (s == "random_per_sample") return {};
    if (s.starts_with("fixed:")) return {true, std::stoi(std::string(s.substr(6)))};
    throw InvalidArgument("unknown base-view policy '" + std::string(s) + "'");
  }
  std::string str() const { return fixed ? "fixed:" + std::to_string(id) : "random_per_sample"; }
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  ad::OptimizerOptions optimizer{};
  std::uint64_t seed = 0;
  BasePolicy base_policy{};
  bool augment = false;
  AugmentConfig augmentation{};
  std::string manifest;
  std::string checkpoint = "model.nvsm";
  std::string log = "train.log";
  std::string probe_log = "probe_loss.tsv";
  std::size_t probe_samples = 8;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (!(optimizer.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.optimizer.learning_rate},
          {"optimizer", std::string(ad::optimizer_name(c.optimizer.kind))},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon},
          {"seed", c.seed},
          {"base_policy", c.base_policy.str()},
          {"augment", c.augment},
          {"jitter", c.augmentation.jitter},
          {"manifest", c.manifest},
          {"checkpoint", c.checkpoint},
          {"log", c.log},
          {"probe_log", c.probe_log},
          {"probe_samples", c.probe_samples}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
  if (j.contains("optimizer")) c.optimizer.kind = ad::parse_optimizer(j.at("optimizer").get<std::string>());
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
  c.seed = j.value("seed", c.seed);
  if (j.contains("base_policy")) c.base_policy = BasePolicy::parse(j.at("base_policy").get<std::string>());
  c.augment = j.value("augment", c.augment);
  c.augmentation.jitter = j.value("jitter", c.augmentation.jitter);
  c.manifest = j.value("manifest", c.manifest);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.log = j.value("log", c.log);
  c.probe_log = j.value("probe_log", c.probe_log);
  c.probe_samples = j.value("probe_samples", c.probe_samples);
  return c;
}

// One sample's forward pass: selection distribution from the base image,
// one refined volume per candidate view, their mixture and its loss.
template <class T>
struct SampleForward {
  ad::Tensor<T> features;  // [K, C, s, s]
  ad::Tensor<T> probs;     // [K]
  ad::Tensor<T> volumes;   // [K, D^3]
  ad::Tensor<T> mixture;   // [D^3]
  ad::Tensor<T> loss;      // [1]
};

// `forced_selection` replaces the learned distribution with a one-hot.
template <class T>
SampleForward<T> forward_sample(const Model<T>& model, const ad::Tensor<T>& images, std::size_t base,
                                const BinaryGrid& truth,
                                std::optional<std::size_t> forced_selection = std::nullopt) {
  const auto& cfg = model.config();
  const auto k = static_cast<std::size_t>(cfg.views);
  if (images.dim(0) != k) {
    throw DimensionError("forward_sample: expected " + std::to_string(k) + " views, got " +
                         std::to_string(images.dim(0)));
  }
  if (base >= k) throw InvalidArgument("base view out of range");
  SampleForward<T> out;
  out.features = model.encode(images);
  if (forced_selection) {
    if (*forced_selection >= k) throw InvalidArgument("forced selection out of range");
    std::vector<T> onehot(k, T(0));
    onehot[*forced_selection] = T(1);
    out.probs = ad::Tensor<T>::from({k}, std::move(onehot));
  } else {
    auto probs = ad::softmax(model.head_logits(ad::gather_rows(out.features, {base})));
    probs = ad::reshape(probs, {k});
    if (!cfg.include_base_in_candidates) {
      probs = ad::mask_renormalize(probs, candidate_mask(k, base, false));
    }
    out.probs = probs;
  }
  std::vector<std::size_t> candidates(k);
  for (std::size_t i = 0; i < k; ++i) candidates[i] = i;
  auto volumes = model.reconstruct_pairs(out.features, base, candidates);
  out.volumes = ad::reshape(volumes, {k, cube(cfg.resolution)});
  out.mixture = nvs::mixture(out.probs, out.volumes).r;
  out.loss = bce(out.mixture, truth);
  return out;
}

inline std::size_t choose_training_base(const TrainConfig& cfg, int epoch, const std::string& sample_id,
                                        std::size_t views) {
  if (cfg.base_policy.fixed) {
    if (cfg.base_policy.id < 0 || static_cast<std::size_t>(cfg.base_policy.id) >= views) {
      throw InvalidArgument("fixed base view out of range");
    }
    return static_cast<std::size_t>(cfg.base_policy.id);
  }
  return derive_seed(cfg.seed, {0xba5eULL, static_cast<std::uint64_t>(epoch), hash_name(sample_id)}) % views;
}

template <class T>
ad::Tensor<T> training_images(const Sample& s, const TrainConfig& cfg, int epoch) {
  if (!cfg.augment) return images_to_tensor<T>(s.views);
  std::vector<Image> aug;
  aug.reserve(s.views.size());
  for (std::size_t v = 0; v < s.views.size(); ++v) {
    aug.push_back(augment(s.views[v],
                          derive_seed(cfg.seed, {0xa06ULL, static_cast<std::uint64_t>(epoch),
                                                 hash_name(s.sample_id), v}),
                          cfg.augmentation));
  }
  return images_to_tensor<T>(aug);
}

// Mean loss over the batch, taken before the optimizer update.
template <class T>
double train_step(const std::vector<const Sample*>& batch, Model<T>& model, ad::Optimizer<T>& opt,
                  const TrainConfig& cfg, int epoch, std::uint64_t step,
                  std::optional<std::size_t> forced_selection = std::nullopt) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  opt.zero_grad();
  double total = 0.0;
  const T inv = T(1) / static_cast<T>(batch.size());
  for (const Sample* s : batch) {
    const auto images = training_images<T>(*s, cfg, epoch);
    const auto base = choose_training_base(cfg, epoch, s->sample_id, images.dim(0));
    auto f = forward_sample(model, images, base, s->truth, forced_selection);
    const double value = static_cast<double>(f.loss.item());
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " on sample " +
                         s->sample_id);
    }
    total += value;
    ad::backward(ad::scale(f.loss, inv));
  }
  opt.step();
  return total / static_cast<double>(batch.size());
}

// Fixed probe: the first train samples in manifest order, deterministic base,
// no augmentation. Reproducible from a checkpoint alone.
template <class T>
double probe_loss(const Model<T>& model, const std::vector<Sample>& samples, const TrainConfig& cfg) {
  ad::NoGradGuard guard;
  const std::size_t n = std::min(cfg.probe_samples, samples.size());
  if (n == 0) return 0.0;
  double total = 0.0;
  TrainConfig plain = cfg;
  plain.augment = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto images = training_images<T>(samples[i], plain, 0);
    const auto base = choose_training_base(plain, -1, samples[i].sample_id, images.dim(0));
    total += static_cast<double>(forward_sample(model, images, base, samples[i].truth).loss.item());
  }
  return total / static_cast<double>(n);
}

inline std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5b11eULL, static_cast<std::uint64_t>(epoch)}));
  shuffle(order, rng);
  return order;
}

inline std::string format_loss(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct StepInfo {
  std::uint64_t step;
  int epoch;
  double loss;
};

struct TrainResult {
  std::vector<double> step_losses;  // only steps run by this call
  std::vector<double> epoch_means;  // indexed from the first epoch run by this call
  std::vector<double> probe_losses;
  int first_epoch = 0;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
  // Stop after this many epochs in total (simulates an interrupted run).
  std::optional<int> stop_after_epoch;
};

// Runs the full training loop on the train split of `samples`. When
// `resume` holds a checkpoint path the model and optimizer continue from it
// and logs are appended; otherwise logs are truncated.
inline TrainResult train(Model<float>& model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& resume = std::nullopt,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  std::vector<const Sample*> train_set;
  for (const auto& s : samples)
    if (s.split == Split::kTrain) train_set.push_back(&s);
  if (train_set.empty()) throw InvalidArgument("no training samples");
  std::vector<Sample> probe;
  for (std::size_t i = 0; i < std::min(cfg.probe_samples, train_set.size()); ++i) {
    probe.push_back(*train_set[i]);
  }

  ad::Optimizer<float> opt(cfg.optimizer, model.parameters());
  int start_epoch = 0;
  if (resume) {
    auto snap = load_checkpoint(*resume, model);
    if (!snap) throw InvalidArgument("checkpoint has no optimizer state to resume from");
    opt.restore(snap->steps, snap->first, snap->second);
    start_epoch = static_cast<int>(snap->epochs_done);
  }

  const auto mode = resume ? std::ios::app : std::ios::trunc;
  std::ofstream log(cfg.log, std::ios::out | mode);
  std::ofstream probe_log(cfg.probe_log, std::ios::out | mode);
  if (!log || !probe_log) throw IoError("cannot open training logs");

  TrainResult result;
  result.first_epoch = start_epoch;
  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::uint64_t step = opt.steps();
  const int last_epoch = hooks.stop_after_epoch ? std::min(cfg.epochs, *hooks.stop_after_epoch) : cfg.epochs;
  for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
    const auto order = epoch_order(cfg.seed, epoch, n);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      std::vector<const Sample*> batch;
      for (std::size_t i = begin; i < std::min(n, begin + bs); ++i) batch.push_back(train_set[order[i]]);
      const double loss = train_step(batch, model, opt, cfg, epoch, step);
      log << step << '\t' << epoch << '\t' << format_loss(loss) << '\n';
      log.flush();
      result.step_losses.push_back(loss);
      if (hooks.on_step) hooks.on_step({step, epoch, loss});
      epoch_total += loss;
      ++epoch_steps;
      ++step;
    }
    result.epoch_means.push_back(epoch_total / static_cast<double>(epoch_steps));
    const double pl = probe_loss(model, probe, cfg);
    result.probe_losses.push_back(pl);
    probe_log << epoch << '\t' << format_loss(pl) << '\n';
    probe_log.flush();
    const auto snap = snapshot(opt, static_cast<std::uint32_t>(epoch + 1));
    save_checkpoint(cfg.checkpoint, model, &snap);
  }
  return result;
}

}  // namespace nvs
