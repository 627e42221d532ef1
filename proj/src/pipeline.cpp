#include "attnseg/pipeline.hpp"

#include <cmath>

#include "attnseg/errors.hpp"
#include "attnseg/image_ops.hpp"

namespace attnseg {

ModelInput prepare_model_input(const CtSlice& slice, const PreprocessParams& params) {
  ModelInput input;
  input.study_id = slice.study_id;
  input.slice_index = slice.slice_index;
  input.pixels = resize_normalize(stack_windows(slice, params.windows), params.side);
  input.brain_mask = resize_mask(compute_brain_mask(slice.hu, params.brain), params.side);
  return input;
}

MaskGrid resize_mask(const MaskGrid& mask, int side) {
  if (mask.rows() == side && mask.cols() == side) return mask;
  MaskGrid out(side, side);
  const double rs = static_cast<double>(mask.rows()) / side;
  const double cs = static_cast<double>(mask.cols()) / side;
  for (Index i = 0; i < side; ++i)
    for (Index j = 0; j < side; ++j) {
      const auto si = std::min<Index>(static_cast<Index>((i + 0.5) * rs), mask.rows() - 1);
      const auto sj = std::min<Index>(static_cast<Index>((j + 0.5) * cs), mask.cols() - 1);
      out(i, j) = mask(si, sj);
    }
  return out;
}

TrainItem prepare_train_item(const CtSlice& slice, const PreprocessParams& params) {
  TrainItem item;
  item.input = prepare_model_input(slice, params);
  item.label = slice.labels;
  if (slice.gt_mask) item.gt = resize_mask(*slice.gt_mask, params.side);
  return item;
}

std::vector<TrainItem> prepare_dataset(const std::vector<CtSlice>& slices,
                                       const PreprocessParams& params) {
  std::vector<TrainItem> items;
  items.reserve(slices.size());
  for (const auto& slice : slices) items.push_back(prepare_train_item(slice, params));
  return items;
}

const char* method_name(Method m) {
  switch (m) {
    case Method::HgiSam: return "hgi-sam";
    case Method::SamBinary: return "sam-binary";
    case Method::SamMultilabel: return "sam-multilabel";
    case Method::GradCam: return "grad-cam";
    case Method::Unet: return "unet";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  if (name == "hgi-sam") return Method::HgiSam;
  if (name == "sam-binary") return Method::SamBinary;
  if (name == "sam-multilabel") return Method::SamMultilabel;
  if (name == "grad-cam") return Method::GradCam;
  if (name == "unet") return Method::Unet;
  throw UsageError("unknown method: " + name);
}

void check_method_compatible(Method method, const std::string& kind, int num_classes) {
  if (method == Method::Unet) {
    if (kind != "unet") throw DependencyError("method unet needs a unet checkpoint");
    return;
  }
  if (kind != "swin")
    throw DependencyError(std::string("method ") + method_name(method) +
                          " needs a swin checkpoint");
  switch (method) {
    case Method::HgiSam:
    case Method::GradCam:
      if (num_classes != 2)
        throw DependencyError(std::string(method_name(method)) +
                              " needs a two-logit model; this checkpoint has " +
                              std::to_string(num_classes) +
                              " (finetune the backbone to two logits first)");
      break;
    case Method::SamBinary:
      if (num_classes != 1)
        throw DependencyError("sam-binary expects the one-logit binary classifier");
      break;
    case Method::SamMultilabel:
      if (num_classes != 6)
        throw DependencyError("sam-multilabel expects the six-logit multi-label classifier");
      break;
    case Method::Unet:
      break;
  }
}

double positive_probability(const Vec<float>& logits, int num_classes) {
  if (num_classes == 2) {
    const double a = logits(0), b = logits(1);
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    return eb / (ea + eb);
  }
  return 1.0 / (1.0 + std::exp(-static_cast<double>(logits(0))));
}

ExtractResult extract_map(const SwinModel<float>& model, const ModelInput& input, Method method) {
  const int num_classes = model.config().num_classes;
  check_method_compatible(method, "swin", num_classes);
  ExtractResult result;
  SwinCache<float> cache;
  switch (method) {
    case Method::HgiSam: {
      auto out = model.forward(input, {.attention = true}, &cache);
      model.backward_positive_class(cache, out);
      result.map = fused_map_from_trace(out.trace, HeadWeighting::GradientNorm, kHgiFusionLayers,
                                        model.config().input_side, MapMethod::HgiSam);
      result.positive_prob = positive_probability(out.logits, num_classes);
      break;
    }
    case Method::SamBinary:
    case Method::SamMultilabel: {
      const auto out = model.forward(input, {.attention = true}, &cache);
      result.map = fused_map_from_trace(out.trace, HeadWeighting::Uniform, kSamFusionLayers,
                                        model.config().input_side, MapMethod::Sam);
      result.positive_prob = positive_probability(out.logits, num_classes);
      break;
    }
    case Method::GradCam: {
      auto out = model.forward(input, {.features = true}, &cache);
      model.backward_positive_class(cache, out);
      result.map =
          grad_cam_map(out.final_features, out.final_feature_grads, model.config().input_side);
      result.positive_prob = positive_probability(out.logits, num_classes);
      break;
    }
    case Method::Unet:
      throw UsageError("use extract_map_unet for the unet method");
  }
  result.map.study_id = input.study_id;
  result.map.slice_index = input.slice_index;
  return result;
}

ExtractResult extract_map_unet(const UNet<float>& model, const ModelInput& input) {
  ExtractResult result;
  const Grid<float> probs = model.forward(input);
  result.map.method = MapMethod::Unet;
  result.map.values = probs.cast<double>().matrix();
  result.map.normalization_max = result.map.values.maxCoeff();
  result.map.study_id = input.study_id;
  result.map.slice_index = input.slice_index;
  result.positive_prob = result.map.values.maxCoeff();
  return result;
}

}  // namespace attnseg
