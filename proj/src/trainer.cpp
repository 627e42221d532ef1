#include "attnseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "attnseg/adamw.hpp"
#include "attnseg/checkpoint.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/evalkit.hpp"
#include "attnseg/image_ops.hpp"
#include "attnseg/losses.hpp"

namespace attnseg {

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::BinaryOneLogit: return "binary_one_logit";
    case TrainMode::BinaryTwoLogit: return "binary_two_logit";
    case TrainMode::MultiLabel: return "multi_label";
    case TrainMode::Unet: return "unet";
  }
  return "unknown";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "binary_one_logit") return TrainMode::BinaryOneLogit;
  if (name == "binary_two_logit") return TrainMode::BinaryTwoLogit;
  if (name == "multi_label") return TrainMode::MultiLabel;
  if (name == "unet") return TrainMode::Unet;
  throw UsageError("unknown training mode: " + name);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
  if (focal_gamma < 0.0) throw ConfigError("focal_gamma must be non-negative");
}

TrainConfig TrainConfig::for_mode(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  switch (mode) {
    case TrainMode::BinaryOneLogit:
    case TrainMode::MultiLabel:
      c.learning_rate = 1e-5;
      c.focal_gamma = 2.0;
      c.imbalance = ImbalanceStrategy::FocalLoss;
      break;
    case TrainMode::BinaryTwoLogit:
      c.learning_rate = 1e-6;
      c.focal_gamma = 0.0;
      c.imbalance = ImbalanceStrategy::InverseFrequencySampling;
      break;
    case TrainMode::Unet:
      c.learning_rate = 1e-3;
      c.imbalance = ImbalanceStrategy::InverseFrequencySampling;
      c.max_epochs = 30;
      break;
  }
  return c;
}

InverseFrequencySampler::InverseFrequencySampler(const std::vector<int>& class_labels,
                                                 std::uint64_t seed)
    : rng_(seed) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < class_labels.size(); ++i) groups[class_labels[i]].push_back(i);
  if (groups.size() < 2)
    throw ConfigError("inverse-frequency sampling needs at least two classes present");
  for (auto& [cls, members] : groups) by_class_.push_back(std::move(members));
}

std::size_t InverseFrequencySampler::next() {
  const auto cls = static_cast<std::size_t>(
      rng_.uniform_int(0, static_cast<std::int64_t>(by_class_.size()) - 1));
  const auto& members = by_class_[cls];
  return members[static_cast<std::size_t>(
      rng_.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1))];
}

double InverseFrequencySampler::class_probability(int cls) const {
  (void)cls;
  return 1.0 / static_cast<double>(by_class_.size());
}

TrainItem augment(const TrainItem& item, const AugmentParams& params, Rng& rng) {
  TrainItem out = item;
  if (params.flip_prob > 0.0 && rng.bernoulli(params.flip_prob)) {
    for (auto& ch : out.input.pixels) ch = flip_lr(ch);
    out.input.brain_mask = flip_lr(out.input.brain_mask);
    if (out.gt) *out.gt = flip_lr(*out.gt);
  }
  if (params.rotation_deg > 0.0) {
    const double angle = rng.uniform(-params.rotation_deg, params.rotation_deg);
    for (auto& ch : out.input.pixels) {
      Grid<float> rotated = rotate_bilinear(ch, angle, 0.f);
      ch = std::move(rotated);
    }
    out.input.brain_mask = rotate_nearest(out.input.brain_mask, angle);
    if (out.gt) *out.gt = rotate_nearest(*out.gt, angle);
  }
  if (params.noise_sigma > 0.0) {
    for (auto& ch : out.input.pixels) {
      for (Index i = 0; i < ch.rows(); ++i)
        for (Index j = 0; j < ch.cols(); ++j)
          ch(i, j) = std::clamp(
              ch(i, j) + static_cast<float>(rng.normal(0.0, params.noise_sigma)), 0.f, 1.f);
    }
  }
  return out;
}

namespace {

ScalarLoss<float> classifier_loss(const Vec<float>& logits, const CategoricalLabel& label,
                                  TrainMode mode, float gamma) {
  switch (mode) {
    case TrainMode::BinaryOneLogit:
      return focal_bce_binary<float>(logits(0), label.any, gamma);
    case TrainMode::BinaryTwoLogit:
      return focal_ce_softmax<float>(logits, label.any ? 1 : 0, gamma);
    case TrainMode::MultiLabel: {
      std::vector<std::uint8_t> targets;
      targets.push_back(label.any);
      for (auto s : label.subtypes) targets.push_back(s);
      return focal_bce_multi<float>(logits, targets, gamma);
    }
    case TrainMode::Unet:
      break;
  }
  throw UsageError("classifier_loss called with unet mode");
}

bool classifier_pred_positive(const Vec<float>& logits, TrainMode mode) {
  switch (mode) {
    case TrainMode::BinaryOneLogit:
    case TrainMode::MultiLabel:
      return logits(0) >= 0.f;  // logistic threshold 0.5
    case TrainMode::BinaryTwoLogit:
      return logits(1) >= logits(0);
    case TrainMode::Unet:
      break;
  }
  throw UsageError("not a classifier mode");
}

std::vector<std::size_t> epoch_order(std::size_t n, const TrainConfig& cfg,
                                     InverseFrequencySampler* sampler, Rng& rng) {
  std::vector<std::size_t> order(n);
  if (sampler) {
    for (auto& idx : order) idx = sampler->next();
  } else {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
  }
  return order;
}

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss))
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                          "; reduce the learning rate or check the inputs");
}

}  // namespace

TrainHistory train_classifier(SwinModel<float>& model, const std::vector<TrainItem>& train,
                              const std::vector<TrainItem>& val, const TrainConfig& config) {
  config.validate();
  if (config.mode == TrainMode::Unet) throw UsageError("train_classifier cannot train a unet");
  if (train.empty() || val.empty()) throw UsageError("train/val sets must be non-empty");
  const int want_logits = config.mode == TrainMode::MultiLabel ? 6
                          : config.mode == TrainMode::BinaryTwoLogit ? 2
                                                                     : 1;
  if (model.config().num_classes != want_logits)
    throw ConfigError("model has " + std::to_string(model.config().num_classes) +
                      " logits but mode " + train_mode_name(config.mode) + " needs " +
                      std::to_string(want_logits));

  std::unique_ptr<InverseFrequencySampler> sampler;
  if (config.imbalance == ImbalanceStrategy::InverseFrequencySampling) {
    std::vector<int> classes;
    classes.reserve(train.size());
    for (const auto& item : train) classes.push_back(item.label.any);
    sampler = std::make_unique<InverseFrequencySampler>(classes, config.seed ^ 0x5e11ed);
  }

  AdamW<float> optimizer({static_cast<float>(config.learning_rate), 0.9f, 0.999f, 1e-8f,
                          static_cast<float>(config.weight_decay)});
  auto param_refs = model.parameters();
  SwinParams<float> grads;
  grads.allocate(model.config());
  auto grad_refs = grads.refs();

  Rng rng(config.seed);
  EarlyStopper stopper(config.patience);
  TrainHistory history;
  SwinParams<float> best_params = model.params();
  const float gamma = static_cast<float>(config.focal_gamma);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = epoch_order(train.size(), config, sampler.get(), rng);
    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      grads.set_zero();
      for (std::size_t i = start; i < stop; ++i) {
        const TrainItem sample = augment(train[order[i]], config.augment, rng);
        SwinCache<float> cache;
        const auto out = model.forward(sample.input, {}, &cache, nullptr, &rng);
        const auto loss = classifier_loss(out.logits, sample.label, config.mode, gamma);
        train_loss += loss.loss;
        ++seen;
        model.backward(cache, loss.dlogits, &grads, nullptr);
      }
      const float inv = 1.f / static_cast<float>(stop - start);
      for (auto& g : grad_refs) Eigen::Map<VecF>(g.data, g.size) *= inv;
      optimizer.step(param_refs, grad_refs);
    }
    train_loss /= static_cast<double>(seen);

    double val_loss = 0.0;
    long correct = 0;
    for (const auto& item : val) {
      const auto out = model.forward(item.input);
      val_loss += classifier_loss(out.logits, item.label, config.mode, gamma).loss;
      correct += classifier_pred_positive(out.logits, config.mode) == (item.label.any != 0);
    }
    val_loss /= static_cast<double>(val.size());
    check_finite(train_loss, epoch);
    check_finite(val_loss, epoch);

    history.epochs.push_back(
        {epoch, train_loss, val_loss, static_cast<double>(correct) / static_cast<double>(val.size())});
    if (stopper.observe(val_loss)) best_params = model.params();
    if (stopper.should_stop()) break;
  }

  model.params() = best_params;
  history.best_epoch = stopper.best_epoch();
  history.best_val_loss = stopper.best();
  return history;
}

SwinModel<float> finetune_two_logit(const std::filesystem::path& base_checkpoint,
                                    const std::vector<TrainItem>& train,
                                    const std::vector<TrainItem>& val, const TrainConfig& config,
                                    TrainHistory* history) {
  const auto info = peek_checkpoint(base_checkpoint);
  if (info.kind != "swin")
    throw DataError("finetune expects a swin checkpoint, got kind '" + info.kind + "'");
  SwinConfig cfg = swin_config_from_json(info.config_json);
  cfg.num_classes = 2;
  SwinModel<float> model(cfg, config.seed ^ 0xf17eULL);
  load_checkpoint_into(model, base_checkpoint, /*allow_head_reinit=*/true);
  TrainConfig tc = config;
  tc.mode = TrainMode::BinaryTwoLogit;
  const auto h = train_classifier(model, train, val, tc);
  if (history) *history = h;
  return model;
}

TrainHistory train_unet(UNet<float>& model, const std::vector<TrainItem>& train,
                        const std::vector<TrainItem>& val, const TrainConfig& config) {
  config.validate();
  if (train.empty() || val.empty()) throw UsageError("train/val sets must be non-empty");
  for (const auto& item : train)
    if (!item.gt) throw UsageError("train_unet requires ground-truth masks");

  std::unique_ptr<InverseFrequencySampler> sampler;
  if (config.imbalance == ImbalanceStrategy::InverseFrequencySampling) {
    std::vector<int> classes;
    for (const auto& item : train) classes.push_back(item.label.any);
    bool two_classes = false;
    for (std::size_t i = 1; i < classes.size(); ++i) two_classes |= classes[i] != classes[0];
    if (two_classes)
      sampler = std::make_unique<InverseFrequencySampler>(classes, config.seed ^ 0x5e11ed);
  }

  AdamW<float> optimizer({static_cast<float>(config.learning_rate), 0.9f, 0.999f, 1e-8f,
                          static_cast<float>(config.weight_decay)});
  auto param_refs = model.parameters();
  std::vector<MatF> grad_w;
  std::vector<VecF> grad_b;

  Rng rng(config.seed);
  EarlyStopper stopper(config.patience);
  TrainHistory history;
  std::vector<std::pair<std::string, std::vector<float>>> best_tensors;
  auto snapshot = [&]() {
    best_tensors.clear();
    for (const auto& r : model.parameters())
      best_tensors.emplace_back(r.name, std::vector<float>(r.data, r.data + r.size));
  };
  snapshot();

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = epoch_order(train.size(), config, sampler.get(), rng);
    double train_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      grad_w.clear();
      grad_b.clear();
      for (std::size_t i = start; i < stop; ++i) {
        const TrainItem sample = augment(train[order[i]], config.augment, rng);
        UNetCache<float> cache;
        const Grid<float> probs = model.forward(sample.input, &cache);
        const MatF probs_m = probs.matrix();
        train_loss += dice_ce_loss<float>(probs_m, *sample.gt);
        ++seen;
        const Grid<float> dprobs = dice_ce_loss_grad<float>(probs_m, *sample.gt).array();
        model.backward(cache, dprobs, grad_w, grad_b);
      }
      const float inv = 1.f / static_cast<float>(stop - start);
      std::vector<ParamRef<float>> grad_refs;
      for (std::size_t c = 0; c < grad_w.size(); ++c) {
        grad_w[c] *= inv;
        grad_b[c] *= inv;
        grad_refs.push_back({"w", grad_w[c].data(), grad_w[c].size(), true});
        grad_refs.push_back({"b", grad_b[c].data(), grad_b[c].size(), false});
      }
      optimizer.step(param_refs, grad_refs);
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(seen, 1));

    double val_loss = 0.0, val_dice = 0.0;
    for (const auto& item : val) {
      const Grid<float> probs = model.forward(item.input);
      const MatF probs_m = probs.matrix();
      val_loss += dice_ce_loss<float>(probs_m, *item.gt);
      MaskGrid pred(probs.rows(), probs.cols());
      for (Index a = 0; a < probs.rows(); ++a)
        for (Index b = 0; b < probs.cols(); ++b) pred(a, b) = probs(a, b) >= 0.5f ? 1 : 0;
      val_dice += dice(pred, *item.gt);
    }
    val_loss /= static_cast<double>(val.size());
    val_dice /= static_cast<double>(val.size());
    check_finite(train_loss, epoch);
    check_finite(val_loss, epoch);

    history.epochs.push_back({epoch, train_loss, val_loss, val_dice});
    if (stopper.observe(val_loss)) snapshot();
    if (stopper.should_stop()) break;
  }

  for (auto& r : model.parameters())
    for (const auto& [name, data] : best_tensors)
      if (name == r.name) std::copy(data.begin(), data.end(), r.data);
  history.best_epoch = stopper.best_epoch();
  history.best_val_loss = stopper.best();
  return history;
}

void split_train_val(const std::vector<TrainItem>& items, double val_fraction, std::uint64_t seed,
                     std::vector<TrainItem>& train_out, std::vector<TrainItem>& val_out) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw UsageError("val_fraction must lie strictly between 0 and 1");
  std::map<std::string, std::vector<std::size_t>> by_study;
  for (std::size_t i = 0; i < items.size(); ++i) by_study[items[i].input.study_id].push_back(i);
  std::vector<std::string> studies;
  for (const auto& [study, _] : by_study) studies.push_back(study);
  Rng rng(seed);
  rng.shuffle(studies);
  const auto val_target = static_cast<std::size_t>(
      std::max(1.0, std::floor(val_fraction * static_cast<double>(items.size()))));
  std::size_t val_count = 0;
  train_out.clear();
  val_out.clear();
  for (const auto& study : studies) {
    auto& dst = val_count < val_target ? val_out : train_out;
    for (std::size_t idx : by_study.at(study)) dst.push_back(items[idx]);
    if (&dst == &val_out) val_count += by_study.at(study).size();
  }
  if (train_out.empty() || val_out.empty())
    throw UsageError("split produced an empty train or validation side");
}

}  // namespace attnseg
