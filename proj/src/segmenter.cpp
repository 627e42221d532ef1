#include "attnseg/segmenter.hpp"

#include "attnseg/errors.hpp"
#include "attnseg/evalkit.hpp"

namespace attnseg {

FusedMap gate_by_brain(const FusedMap& map, const MaskGrid& brain_mask) {
  if (!same_shape(map.values, brain_mask)) throw InputError("gate_by_brain: shape mismatch");
  FusedMap out = map;
  for (Index i = 0; i < out.values.rows(); ++i)
    for (Index j = 0; j < out.values.cols(); ++j)
      if (!brain_mask(i, j)) out.values(i, j) = 0.0;
  const double mx = out.values.maxCoeff();
  if (mx > 0.0) {
    out.values /= mx;
    out.normalization_max = map.normalization_max * mx;
  }
  return out;
}

double grid_search_threshold(const std::vector<std::pair<const FusedMap*, const MaskGrid*>>& pairs,
                             const ThresholdGrid& grid, double* best_mean_dice) {
  if (pairs.empty()) throw UsageError("grid_search_threshold: no validation pairs");
  if (!(grid.start >= 0.0 && grid.start < grid.stop && grid.stop <= 1.0 && grid.step > 0.0))
    throw UsageError("grid_search_threshold: invalid grid");
  double best_t = grid.start;
  double best_dice = -1.0;
  for (double t = grid.start; t <= grid.stop + 1e-12; t += grid.step) {
    double mean_dice = 0.0;
    for (const auto& [map, gt] : pairs) {
      const SegMask m = binarize(*map, t);
      mean_dice += dice(m.mask, *gt);
    }
    mean_dice /= static_cast<double>(pairs.size());
    if (mean_dice > best_dice) {  // strict: ties keep the smaller threshold
      best_dice = mean_dice;
      best_t = t;
    }
  }
  if (best_mean_dice) *best_mean_dice = best_dice;
  return best_t;
}

SegMask binarize(const FusedMap& map, double threshold) {
  if (threshold < 0.0 || threshold > 1.0) throw UsageError("binarize: threshold outside [0, 1]");
  SegMask out;
  out.threshold_used = threshold;
  out.method = map_method_name(map.method);
  out.mask.resize(map.values.rows(), map.values.cols());
  for (Index i = 0; i < map.values.rows(); ++i)
    for (Index j = 0; j < map.values.cols(); ++j)
      out.mask(i, j) = map.values(i, j) >= threshold ? 1 : 0;
  out.foreground_pixels = count_foreground(out.mask);
  return out;
}

bool detect_from_mask(const SegMask& mask, int min_pixels) {
  return mask.foreground_pixels >= min_pixels;
}

}  // namespace attnseg
