#pragma once

#include <string>
#include <utility>
#include <vector>

#include "attnseg/attention_maps.hpp"
#include "attnseg/grid.hpp"

namespace attnseg {

struct SegMask {
  MaskGrid mask;
  double threshold_used = 0.0;
  std::string method;
  long foreground_pixels = 0;
};

/// Zeroes the map outside the brain region and re-max-normalizes the remainder
/// (unless it is identically zero).
FusedMap gate_by_brain(const FusedMap& map, const MaskGrid& brain_mask);

struct ThresholdGrid {
  double start = 0.05;
  double stop = 0.95;
  double step = 0.05;
};

/// Exhaustive scan for the threshold maximizing mean Dice over (map, gt)
/// pairs; ties break toward the smallest threshold.
double grid_search_threshold(const std::vector<std::pair<const FusedMap*, const MaskGrid*>>& pairs,
                             const ThresholdGrid& grid, double* best_mean_dice = nullptr);

SegMask binarize(const FusedMap& map, double threshold);

/// Positive iff the mask holds at least `min_pixels` foreground pixels.
bool detect_from_mask(const SegMask& mask, int min_pixels = 10);

}  // namespace attnseg
