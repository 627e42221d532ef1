#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace attnseg {

template <class T>
using Grid = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;

using GridF = Grid<float>;
using GridD = Grid<double>;

/// Binary image grid with values in {0, 1}.
using MaskGrid = Grid<std::uint8_t>;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

using Index = Eigen::Index;

inline long count_foreground(const MaskGrid& m) {
  return static_cast<long>((m != 0).count());
}

template <class A, class B>
bool same_shape(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace attnseg
