#pragma once

#include <vector>

#include "attnseg/grid.hpp"

namespace attnseg {

/// Attention weights recorded at one transformer block, plus (after a backward
/// pass) the gradient of the positive-class score with respect to them.
/// Matrices are indexed window-major: entry w*heads + h holds the n x n map of
/// head h in window w, one row per query token.
struct BlockTrace {
  int block_index = 0;  // global, 0-based
  int layer_index = 1;  // 1-based hierarchy
  bool shifted = false;
  int grid = 0;    // token grid side at this layer
  int window = 0;  // effective window side
  int shift = 0;   // cyclic shift applied before windowing (0 for regular blocks)
  int heads = 0;
  int tokens_per_window = 0;

  std::vector<MatD> weights;
  std::vector<MatD> grads;
  bool has_grads = false;

  int num_windows() const {
    return heads > 0 ? static_cast<int>(weights.size()) / heads : 0;
  }
};

struct AttentionTrace {
  std::vector<BlockTrace> blocks;

  bool empty() const { return blocks.empty(); }
};

}  // namespace attnseg
