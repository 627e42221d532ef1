#pragma once

#include <cmath>

#include "attnseg/errors.hpp"
#include "attnseg/grid.hpp"

namespace attnseg {

/// Corner-aligned bilinear resample: source corners map exactly onto output
/// corners, so a size-preserving call is the identity and a 2x2 ramp upsamples
/// to a linear ramp.
template <class T>
Grid<T> bilinear_resize(const Grid<T>& src, Index out_rows, Index out_cols) {
  if (src.size() == 0) throw InputError("bilinear_resize: empty grid");
  if (out_rows < 1 || out_cols < 1) throw InputError("bilinear_resize: empty output");
  Grid<T> out(out_rows, out_cols);
  const double rscale = out_rows > 1 ? double(src.rows() - 1) / double(out_rows - 1) : 0.0;
  const double cscale = out_cols > 1 ? double(src.cols() - 1) / double(out_cols - 1) : 0.0;
  for (Index i = 0; i < out_rows; ++i) {
    const double y = i * rscale;
    const Index y0 = std::min<Index>(static_cast<Index>(y), src.rows() - 1);
    const Index y1 = std::min<Index>(y0 + 1, src.rows() - 1);
    const double fy = y - double(y0);
    for (Index j = 0; j < out_cols; ++j) {
      const double x = j * cscale;
      const Index x0 = std::min<Index>(static_cast<Index>(x), src.cols() - 1);
      const Index x1 = std::min<Index>(x0 + 1, src.cols() - 1);
      const double fx = x - double(x0);
      const double top = double(src(y0, x0)) * (1.0 - fx) + double(src(y0, x1)) * fx;
      const double bot = double(src(y1, x0)) * (1.0 - fx) + double(src(y1, x1)) * fx;
      out(i, j) = static_cast<T>(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

/// Mean over non-overlapping factor x factor boxes.
template <class T>
Grid<T> box_downsample(const Grid<T>& src, int factor) {
  if (factor < 1 || src.rows() % factor != 0 || src.cols() % factor != 0)
    throw InputError("box_downsample: size not divisible by factor");
  Grid<T> out(src.rows() / factor, src.cols() / factor);
  const double inv = 1.0 / (double(factor) * double(factor));
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) {
      double s = 0.0;
      for (int a = 0; a < factor; ++a)
        for (int b = 0; b < factor; ++b) s += double(src(i * factor + a, j * factor + b));
      out(i, j) = static_cast<T>(s * inv);
    }
  return out;
}

/// Box average when shrinking by an integer factor, bilinear otherwise.
template <class T>
Grid<T> resize_grid(const Grid<T>& src, Index out_rows, Index out_cols) {
  if (src.rows() == out_rows && src.cols() == out_cols) return src;
  if (out_rows > 0 && out_cols > 0 && src.rows() % out_rows == 0 && src.cols() % out_cols == 0 &&
      src.rows() / out_rows == src.cols() / out_cols) {
    return box_downsample(src, static_cast<int>(src.rows() / out_rows));
  }
  return bilinear_resize(src, out_rows, out_cols);
}

template <class T>
Grid<T> flip_lr(const Grid<T>& src) {
  return src.rowwise().reverse();
}

/// Rotation about the grid center by `degrees` (counter-clockwise in image
/// coordinates), bilinear sampling, `fill` outside the source.
template <class T>
Grid<T> rotate_bilinear(const Grid<T>& src, double degrees, T fill) {
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (double(src.rows()) - 1.0) / 2.0;
  const double cx = (double(src.cols()) - 1.0) / 2.0;
  Grid<T> out(src.rows(), src.cols());
  for (Index i = 0; i < src.rows(); ++i)
    for (Index j = 0; j < src.cols(); ++j) {
      const double dy = double(i) - cy, dx = double(j) - cx;
      const double sy = c * dy + s * dx + cy;
      const double sx = -s * dy + c * dx + cx;
      if (sy < 0.0 || sx < 0.0 || sy > double(src.rows() - 1) || sx > double(src.cols() - 1)) {
        out(i, j) = fill;
        continue;
      }
      const Index y0 = static_cast<Index>(sy), x0 = static_cast<Index>(sx);
      const Index y1 = std::min<Index>(y0 + 1, src.rows() - 1);
      const Index x1 = std::min<Index>(x0 + 1, src.cols() - 1);
      const double fy = sy - double(y0), fx = sx - double(x0);
      const double top = double(src(y0, x0)) * (1.0 - fx) + double(src(y0, x1)) * fx;
      const double bot = double(src(y1, x0)) * (1.0 - fx) + double(src(y1, x1)) * fx;
      out(i, j) = static_cast<T>(top * (1.0 - fy) + bot * fy);
    }
  return out;
}

/// Same rotation with nearest-neighbor sampling, for label masks.
MaskGrid rotate_nearest(const MaskGrid& src, double degrees);

MaskGrid dilate_disk(const MaskGrid& m, int radius);
MaskGrid erode_disk(const MaskGrid& m, int radius);
MaskGrid close_disk(const MaskGrid& m, int radius);

/// Largest 4-connected foreground component; empty input gives an empty mask.
MaskGrid largest_component(const MaskGrid& m);

/// Fills holes: foreground plus every background region not reachable from the border.
MaskGrid fill_holes(const MaskGrid& m);

}  // namespace attnseg
