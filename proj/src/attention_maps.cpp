#include "attnseg/attention_maps.hpp"

#include <cmath>

#include "attnseg/attention.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/image_ops.hpp"

namespace attnseg {

const char* map_method_name(MapMethod m) {
  switch (m) {
    case MapMethod::HgiSam: return "hgi-sam";
    case MapMethod::Sam: return "sam";
    case MapMethod::GradCam: return "grad-cam";
    case MapMethod::Unet: return "unet";
  }
  return "unknown";
}

MapMethod map_method_from_name(const std::string& name) {
  if (name == "hgi-sam") return MapMethod::HgiSam;
  if (name == "sam") return MapMethod::Sam;
  if (name == "grad-cam") return MapMethod::GradCam;
  if (name == "unet") return MapMethod::Unet;
  throw UsageError("unknown map method: " + name);
}

VecD head_gradient_norms(const BlockTrace& block) {
  if (!block.has_grads) throw StateError("attention gradients have not been recorded");
  VecD norms = VecD::Zero(block.heads);
  for (int w = 0; w < block.num_windows(); ++w)
    for (int h = 0; h < block.heads; ++h)
      norms(h) += block.grads[static_cast<std::size_t>(w * block.heads + h)].squaredNorm();
  return norms.array().sqrt();
}

std::vector<MatD> hgi_block_weight(const BlockTrace& block) {
  const VecD norms = head_gradient_norms(block);
  const int nw = block.num_windows();
  std::vector<MatD> out(static_cast<std::size_t>(nw));
  for (int w = 0; w < nw; ++w) {
    MatD acc = MatD::Zero(block.tokens_per_window, block.tokens_per_window);
    for (int h = 0; h < block.heads; ++h)
      acc += norms(h) * block.weights[static_cast<std::size_t>(w * block.heads + h)];
    out[static_cast<std::size_t>(w)] = acc / static_cast<double>(block.heads);
  }
  return out;
}

std::vector<MatD> sam_block_weight(const BlockTrace& block) {
  const int nw = block.num_windows();
  std::vector<MatD> out(static_cast<std::size_t>(nw));
  for (int w = 0; w < nw; ++w) {
    MatD acc = MatD::Zero(block.tokens_per_window, block.tokens_per_window);
    for (int h = 0; h < block.heads; ++h)
      acc += block.weights[static_cast<std::size_t>(w * block.heads + h)];
    out[static_cast<std::size_t>(w)] = acc / static_cast<double>(block.heads);
  }
  return out;
}

VecD query_average(const MatD& window_weights) {
  if (window_weights.rows() != window_weights.cols())
    throw InputError("query_average expects a square per-window matrix");
  return window_weights.colwise().mean().transpose();
}

MatD block_token_map(const BlockTrace& block, HeadWeighting weighting) {
  const auto weights =
      weighting == HeadWeighting::GradientNorm ? hgi_block_weight(block) : sam_block_weight(block);
  std::vector<MatD> saliency(weights.size());
  for (std::size_t w = 0; w < weights.size(); ++w) saliency[w] = query_average(weights[w]);
  MatD tokens = window_reverse(saliency, block.grid, block.window);
  if (block.shift > 0) tokens = reverse_shift(tokens, block.grid, block.shift);
  // One column per token; lay it back out as the token grid.
  MatD grid(block.grid, block.grid);
  for (int i = 0; i < block.grid; ++i)
    for (int j = 0; j < block.grid; ++j) grid(i, j) = tokens(Index(i) * block.grid + j, 0);
  return grid;
}

BlockMap layer_pair_map(const BlockTrace& regular, const BlockTrace& shifted,
                        HeadWeighting weighting) {
  if (regular.layer_index != shifted.layer_index)
    throw UsageError("layer_pair_map: blocks come from different layers");
  if (regular.shifted || !shifted.shifted)
    throw UsageError("layer_pair_map: expects a (regular, shifted) block pair");
  if (regular.grid != shifted.grid) throw UsageError("layer_pair_map: grid mismatch");
  BlockMap out;
  out.layer_index = regular.layer_index;
  out.pair_index = regular.block_index / 2;
  out.values = block_token_map(regular, weighting).cwiseProduct(block_token_map(shifted, weighting));
  return out;
}

BlockMap layer_aggregate(const std::vector<const BlockTrace*>& layer_blocks,
                         HeadWeighting weighting) {
  if (layer_blocks.empty() || layer_blocks.size() % 2 != 0)
    throw ConfigError("layer_aggregate needs an even, non-zero number of blocks");
  BlockMap agg;
  agg.layer_index = layer_blocks.front()->layer_index;
  const std::size_t pairs = layer_blocks.size() / 2;
  for (std::size_t p = 0; p < pairs; ++p) {
    BlockMap pair = layer_pair_map(*layer_blocks[2 * p], *layer_blocks[2 * p + 1], weighting);
    if (p == 0)
      agg.values = pair.values;
    else
      agg.values += pair.values;
  }
  agg.values /= static_cast<double>(pairs);
  agg.pair_index = 0;
  return agg;
}

LayerMap layer_to_image(const BlockMap& map, int side) {
  LayerMap out;
  out.layer_index = map.layer_index;
  GridD src = map.values.array();
  out.values = bilinear_resize(src, side, side).matrix();
  return out;
}

FusedMap fuse(const std::vector<LayerMap>& maps, const std::vector<int>& layers_used,
              MapMethod method) {
  if (layers_used.empty()) throw UsageError("fuse: empty layer set");
  FusedMap out;
  out.method = method;
  out.layers_used = layers_used;
  bool first = true;
  for (int layer : layers_used) {
    const LayerMap* found = nullptr;
    for (const auto& m : maps)
      if (m.layer_index == layer) found = &m;
    if (!found) throw UsageError("fuse: layer " + std::to_string(layer) + " not provided");
    if (first) {
      out.values = found->values;
      first = false;
    } else {
      if (!same_shape(out.values, found->values)) throw InputError("fuse: map resolution mismatch");
      out.values = out.values.cwiseProduct(found->values);
    }
  }
  out.normalization_max = out.values.maxCoeff();
  if (out.normalization_max > 0.0) out.values /= out.normalization_max;
  return out;
}

FusedMap grad_cam_map(const MatD& features, const MatD& grads, int side) {
  if (!same_shape(features, grads)) throw InputError("grad_cam_map: feature/grad shape mismatch");
  const auto tokens = features.rows();
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (Index(grid) * grid != tokens) throw InputError("grad_cam_map: token grid is not square");
  const VecD channel_w = grads.colwise().mean().transpose();
  VecD cam = (features * channel_w).cwiseMax(0.0);
  MatD cam_grid(grid, grid);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) cam_grid(i, j) = cam(Index(i) * grid + j);
  BlockMap block{cam_grid, 4, 0};
  LayerMap lm = layer_to_image(block, side);
  FusedMap out;
  out.method = MapMethod::GradCam;
  out.layers_used = {4};
  out.values = lm.values;
  out.normalization_max = out.values.maxCoeff();
  if (out.normalization_max > 0.0) out.values /= out.normalization_max;
  return out;
}

FusedMap fused_map_from_trace(const AttentionTrace& trace, HeadWeighting weighting,
                              const std::vector<int>& layers_used, int side, MapMethod method) {
  if (trace.empty()) throw StateError("fused_map_from_trace: empty trace");
  std::vector<LayerMap> layer_maps;
  for (int layer : layers_used) {
    std::vector<const BlockTrace*> blocks;
    for (const auto& b : trace.blocks)
      if (b.layer_index == layer) blocks.push_back(&b);
    if (blocks.empty()) throw UsageError("trace has no blocks for layer " + std::to_string(layer));
    layer_maps.push_back(layer_to_image(layer_aggregate(blocks, weighting), side));
  }
  return fuse(layer_maps, layers_used, method);
}

}  // namespace attnseg
