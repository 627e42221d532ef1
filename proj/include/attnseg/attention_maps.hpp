#pragma once

#include <string>
#include <vector>

#include "attnseg/grid.hpp"
#include "attnseg/trace.hpp"

namespace attnseg {

enum class MapMethod { HgiSam, Sam, GradCam, Unet };

const char* map_method_name(MapMethod m);
MapMethod map_method_from_name(const std::string& name);

/// Saliency at token-grid resolution for one block pair of a layer.
struct BlockMap {
  MatD values;  // [grid x grid], non-negative
  int layer_index = 1;
  int pair_index = 0;
};

/// Saliency upsampled to image resolution.
struct LayerMap {
  MatD values;
  int layer_index = 1;
};

/// Image-resolution map, max-normalized to [0, 1] unless identically zero.
/// (Unet probability maps reuse this container without renormalization.)
struct FusedMap {
  MatD values;
  MapMethod method = MapMethod::Sam;
  std::vector<int> layers_used;
  double normalization_max = 0.0;
  std::string study_id;
  int slice_index = 0;
};

/// Head weighting for block maps: the gradient-infused variant scales each
/// head by the norm of the positive-class gradient before averaging; the
/// plain variant is a uniform head mean.
enum class HeadWeighting { GradientNorm, Uniform };

/// Frobenius norm of each head's recorded gradient with all windows pooled.
VecD head_gradient_norms(const BlockTrace& block);

/// Per-window gradient-weighted attention: (1/H) * sum_h norm_h * A_h.
std::vector<MatD> hgi_block_weight(const BlockTrace& block);

/// Per-window plain head average.
std::vector<MatD> sam_block_weight(const BlockTrace& block);

/// Column mean: saliency received by each key token, averaged over queries.
VecD query_average(const MatD& window_weights);

/// Per-window key-token saliency assembled back onto the full token grid
/// (window reverse), undoing the block's cyclic shift if it had one.
MatD block_token_map(const BlockTrace& block, HeadWeighting weighting);

/// Elementwise product of the regular and shifted maps of one block pair.
BlockMap layer_pair_map(const BlockTrace& regular, const BlockTrace& shifted,
                        HeadWeighting weighting);

/// Mean of the depth/2 pair maps of one layer (blocks must be one layer's
/// blocks in order).
BlockMap layer_aggregate(const std::vector<const BlockTrace*>& layer_blocks,
                         HeadWeighting weighting);

/// Corner-aligned bilinear upsample to side x side.
LayerMap layer_to_image(const BlockMap& map, int side);

/// Elementwise product over the selected layers (1-based), max-normalized.
FusedMap fuse(const std::vector<LayerMap>& maps, const std::vector<int>& layers_used,
              MapMethod method);

inline const std::vector<int> kHgiFusionLayers{1, 2, 3};
inline const std::vector<int> kSamFusionLayers{1, 2, 3, 4};

/// Gradient-weighted channel sum of the final-block token features, rectified,
/// upsampled, max-normalized. `features` and `grads` are [tokens x channels]
/// over a square token grid.
FusedMap grad_cam_map(const MatD& features, const MatD& grads, int side);

/// Full map pipeline from a recorded trace: per selected layer, aggregate the
/// pair maps, upsample, and fuse.
FusedMap fused_map_from_trace(const AttentionTrace& trace, HeadWeighting weighting,
                              const std::vector<int>& layers_used, int side, MapMethod method);

}  // namespace attnseg
