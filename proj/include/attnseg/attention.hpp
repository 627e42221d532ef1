#pragma once

#include <cmath>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/grid.hpp"

namespace attnseg {

/// Token grids are stored one token per row, row-major over the (grid, grid)
/// layout: token (i, j) lives at row i*grid + j.

template <class T>
std::vector<Mat<T>> window_partition(const Mat<T>& tokens, int grid, int window) {
  if (grid <= 0 || window <= 0 || grid % window != 0)
    throw ConfigError("token grid " + std::to_string(grid) + " does not tile with window " +
                      std::to_string(window));
  if (tokens.rows() != Index(grid) * grid) throw InputError("token count does not match grid");
  const int per_side = grid / window;
  const int n = window * window;
  std::vector<Mat<T>> windows(static_cast<std::size_t>(per_side) * per_side);
  for (int wi = 0; wi < per_side; ++wi)
    for (int wj = 0; wj < per_side; ++wj) {
      Mat<T>& w = windows[static_cast<std::size_t>(wi * per_side + wj)];
      w.resize(n, tokens.cols());
      for (int ti = 0; ti < window; ++ti)
        for (int tj = 0; tj < window; ++tj)
          w.row(ti * window + tj) = tokens.row((wi * window + ti) * grid + (wj * window + tj));
    }
  return windows;
}

template <class T>
Mat<T> window_reverse(const std::vector<Mat<T>>& windows, int grid, int window) {
  if (grid <= 0 || window <= 0 || grid % window != 0)
    throw ConfigError("token grid does not tile with window");
  const int per_side = grid / window;
  if (windows.size() != static_cast<std::size_t>(per_side) * per_side)
    throw InputError("window count does not match grid");
  Mat<T> tokens(Index(grid) * grid, windows.front().cols());
  for (int wi = 0; wi < per_side; ++wi)
    for (int wj = 0; wj < per_side; ++wj) {
      const Mat<T>& w = windows[static_cast<std::size_t>(wi * per_side + wj)];
      if (w.rows() != Index(window) * window) throw InputError("window token count mismatch");
      for (int ti = 0; ti < window; ++ti)
        for (int tj = 0; tj < window; ++tj)
          tokens.row((wi * window + ti) * grid + (wj * window + tj)) = w.row(ti * window + tj);
    }
  return tokens;
}

/// Torus roll: output token (i, j) takes input token (i+offset, j+offset).
template <class T>
Mat<T> cyclic_shift(const Mat<T>& tokens, int grid, int offset) {
  if (tokens.rows() != Index(grid) * grid) throw InputError("token count does not match grid");
  const int o = ((offset % grid) + grid) % grid;
  if (o == 0) return tokens;
  Mat<T> out(tokens.rows(), tokens.cols());
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j)
      out.row(i * grid + j) = tokens.row(((i + o) % grid) * grid + ((j + o) % grid));
  return out;
}

template <class T>
Mat<T> reverse_shift(const Mat<T>& tokens, int grid, int offset) {
  return cyclic_shift(tokens, grid, -offset);
}

template <class T>
void softmax_rows(Mat<T>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const T mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

template <class T>
struct AttentionResult {
  Mat<T> weights;  // softmax(q k^T / sqrt(d) + bias (+ mask)), one row per query
  Mat<T> output;   // weights * v
};

/// Scaled dot-product attention for a single head within one window.
template <class T>
AttentionResult<T> attention_single_head(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                                         const Mat<T>& bias, const Mat<T>* mask = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw InputError("attention shape mismatch");
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  AttentionResult<T> r;
  r.weights.noalias() = q * k.transpose() * scale;
  if (bias.size() != 0) {
    if (!same_shape(bias, r.weights)) throw InputError("bias shape mismatch");
    r.weights += bias;
  }
  if (mask != nullptr) r.weights += *mask;
  softmax_rows(r.weights);
  r.output.noalias() = r.weights * v;
  return r;
}

}  // namespace attnseg
