#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "attnseg/attention_maps.hpp"
#include "attnseg/imaging.hpp"
#include "attnseg/swin.hpp"
#include "attnseg/trainer.hpp"
#include "attnseg/unet.hpp"

namespace attnseg {

struct PreprocessParams {
  std::array<WindowSpec, 3> windows = kDefaultWindows;
  int side = 96;
  BrainMaskParams brain;
};

/// Windowed channels resampled and min-max scaled, plus the brain mask
/// carried along at the same resolution.
ModelInput prepare_model_input(const CtSlice& slice, const PreprocessParams& params);

/// Nearest-neighbor mask resample (labels must stay binary).
MaskGrid resize_mask(const MaskGrid& mask, int side);

TrainItem prepare_train_item(const CtSlice& slice, const PreprocessParams& params);

std::vector<TrainItem> prepare_dataset(const std::vector<CtSlice>& slices,
                                       const PreprocessParams& params);

/// Extraction method of the run; sam-binary and sam-multilabel share the plain
/// head-average recipe and differ only in the classifier they read.
enum class Method { HgiSam, SamBinary, SamMultilabel, GradCam, Unet };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

/// Checkpoint kinds and logit counts each method requires.
void check_method_compatible(Method method, const std::string& kind, int num_classes);

struct ExtractResult {
  FusedMap map;
  double positive_prob = 0.0;
};

/// Runs the model on one input and produces the method's saliency map plus
/// the detection score.
ExtractResult extract_map(const SwinModel<float>& model, const ModelInput& input, Method method);

ExtractResult extract_map_unet(const UNet<float>& model, const ModelInput& input);

/// Positive-class probability from raw logits for each classifier flavor.
double positive_probability(const Vec<float>& logits, int num_classes);

}  // namespace attnseg
