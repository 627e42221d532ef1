#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attnseg/imaging.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/swin.hpp"
#include "attnseg/unet.hpp"

namespace attnseg {

enum class TrainMode { BinaryOneLogit, BinaryTwoLogit, MultiLabel, Unet };

const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

enum class ImbalanceStrategy { FocalLoss, InverseFrequencySampling };

struct AugmentParams {
  double flip_prob = 0.5;
  double rotation_deg = 15.0;   // uniform in +-rotation_deg
  double noise_sigma = 0.01;    // on normalized channels
};

struct TrainConfig {
  TrainMode mode = TrainMode::BinaryOneLogit;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int batch_size = 8;
  int max_epochs = 20;
  int patience = 3;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;
  AugmentParams augment;
  ImbalanceStrategy imbalance = ImbalanceStrategy::FocalLoss;

  void validate() const;

  /// Mode-specific published defaults: 1e-5 for classifier training, 1e-6 for
  /// the two-logit finetune, 1e-3 for the U-Net; the finetune uses plain
  /// cross-entropy with inverse-frequency sampling.
  static TrainConfig for_mode(TrainMode mode);
};

/// One training example at model resolution.
struct TrainItem {
  ModelInput input;
  std::optional<MaskGrid> gt;
  CategoricalLabel label;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;  // accuracy for classifiers, mean dice for the unet
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Draws classes uniformly, then a uniform member of the class, which makes
/// per-sample probability proportional to the inverse of its class frequency.
class InverseFrequencySampler {
 public:
  InverseFrequencySampler(const std::vector<int>& class_labels, std::uint64_t seed);
  std::size_t next();
  double class_probability(int cls) const;

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  Rng rng_;
};

class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  /// True when this epoch improved on the best validation loss so far.
  bool observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch_ + 1;
      bad_streak_ = 0;
      ++epoch_;
      return true;
    }
    ++bad_streak_;
    ++epoch_;
    return false;
  }
  bool should_stop() const { return bad_streak_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_ = 3;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int bad_streak_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Flip and rotation act identically on channels, brain mask and gt mask;
/// Gaussian noise touches only the channels and the result is re-clamped.
TrainItem augment(const TrainItem& item, const AugmentParams& params, Rng& rng);

TrainHistory train_classifier(SwinModel<float>& model, const std::vector<TrainItem>& train,
                              const std::vector<TrainItem>& val, const TrainConfig& config);

/// Builds a two-logit model on the backbone stored in `base_checkpoint`
/// (head reinitialized), then trains it.
SwinModel<float> finetune_two_logit(const std::filesystem::path& base_checkpoint,
                                    const std::vector<TrainItem>& train,
                                    const std::vector<TrainItem>& val, const TrainConfig& config,
                                    TrainHistory* history = nullptr);

TrainHistory train_unet(UNet<float>& model, const std::vector<TrainItem>& train,
                        const std::vector<TrainItem>& val, const TrainConfig& config);

/// Study-grouped split; no study contributes to both sides.
void split_train_val(const std::vector<TrainItem>& items, double val_fraction, std::uint64_t seed,
                     std::vector<TrainItem>& train_out, std::vector<TrainItem>& val_out);

}  // namespace attnseg
