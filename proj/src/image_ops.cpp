#include "attnseg/image_ops.hpp"

#include <utility>
#include <vector>

namespace attnseg {
namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int a = -radius; a <= radius; ++a)
    for (int b = -radius; b <= radius; ++b)
      if (a * a + b * b <= radius * radius) offs.emplace_back(a, b);
  return offs;
}

}  // namespace

MaskGrid rotate_nearest(const MaskGrid& src, double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (double(src.rows()) - 1.0) / 2.0;
  const double cx = (double(src.cols()) - 1.0) / 2.0;
  MaskGrid out = MaskGrid::Zero(src.rows(), src.cols());
  for (Index i = 0; i < src.rows(); ++i)
    for (Index j = 0; j < src.cols(); ++j) {
      const double dy = double(i) - cy, dx = double(j) - cx;
      const Index sy = static_cast<Index>(std::lround(c * dy + s * dx + cy));
      const Index sx = static_cast<Index>(std::lround(-s * dy + c * dx + cx));
      if (sy >= 0 && sx >= 0 && sy < src.rows() && sx < src.cols()) out(i, j) = src(sy, sx);
    }
  return out;
}

MaskGrid dilate_disk(const MaskGrid& m, int radius) {
  if (radius <= 0) return m;
  const auto offs = disk_offsets(radius);
  MaskGrid out = MaskGrid::Zero(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      if (!m(i, j)) continue;
      for (const auto& [a, b] : offs) {
        const Index y = i + a, x = j + b;
        if (y >= 0 && x >= 0 && y < m.rows() && x < m.cols()) out(y, x) = 1;
      }
    }
  return out;
}

MaskGrid erode_disk(const MaskGrid& m, int radius) {
  if (radius <= 0) return m;
  const auto offs = disk_offsets(radius);
  MaskGrid out = MaskGrid::Zero(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      bool keep = m(i, j) != 0;
      for (std::size_t k = 0; keep && k < offs.size(); ++k) {
        const Index y = i + offs[k].first, x = j + offs[k].second;
        keep = y >= 0 && x >= 0 && y < m.rows() && x < m.cols() && m(y, x) != 0;
      }
      if (keep) out(i, j) = 1;
    }
  return out;
}

MaskGrid close_disk(const MaskGrid& m, int radius) {
  return erode_disk(dilate_disk(m, radius), radius);
}

MaskGrid largest_component(const MaskGrid& m) {
  MaskGrid out = MaskGrid::Zero(m.rows(), m.cols());
  Grid<int> label = Grid<int>::Constant(m.rows(), m.cols(), -1);
  std::vector<Index> stack;
  int best_label = -1;
  long best_size = 0;
  int next_label = 0;
  const Index rows = m.rows(), cols = m.cols();
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      if (!m(i, j) || label(i, j) >= 0) continue;
      long size = 0;
      stack.push_back(i * cols + j);
      label(i, j) = next_label;
      while (!stack.empty()) {
        const Index t = stack.back();
        stack.pop_back();
        ++size;
        const Index y = t / cols, x = t % cols;
        const Index ny[4] = {y - 1, y + 1, y, y};
        const Index nx[4] = {x, x, x - 1, x + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || nx[k] < 0 || ny[k] >= rows || nx[k] >= cols) continue;
          if (!m(ny[k], nx[k]) || label(ny[k], nx[k]) >= 0) continue;
          label(ny[k], nx[k]) = next_label;
          stack.push_back(ny[k] * cols + nx[k]);
        }
      }
      if (size > best_size) {
        best_size = size;
        best_label = next_label;
      }
      ++next_label;
    }
  if (best_label < 0) return out;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (label(i, j) == best_label) out(i, j) = 1;
  return out;
}

MaskGrid fill_holes(const MaskGrid& m) {
  const Index rows = m.rows(), cols = m.cols();
  // Flood the background from the border; anything unreached is a hole.
  MaskGrid outside = MaskGrid::Zero(rows, cols);
  std::vector<Index> stack;
  auto push = [&](Index y, Index x) {
    if (y < 0 || x < 0 || y >= rows || x >= cols) return;
    if (m(y, x) || outside(y, x)) return;
    outside(y, x) = 1;
    stack.push_back(y * cols + x);
  };
  for (Index j = 0; j < cols; ++j) {
    push(0, j);
    push(rows - 1, j);
  }
  for (Index i = 0; i < rows; ++i) {
    push(i, 0);
    push(i, cols - 1);
  }
  while (!stack.empty()) {
    const Index t = stack.back();
    stack.pop_back();
    const Index y = t / cols, x = t % cols;
    push(y - 1, x);
    push(y + 1, x);
    push(y, x - 1);
    push(y, x + 1);
  }
  MaskGrid out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = (m(i, j) || !outside(i, j)) ? 1 : 0;
  return out;
}

}  // namespace attnseg
