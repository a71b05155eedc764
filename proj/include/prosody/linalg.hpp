#pragma once

#include <Eigen/Core>

#include <cassert>
#include <vector>

namespace prosody {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// Row ranges of a packed batch: item i owns rows [offsets[i], offsets[i+1]).
struct Segments {
  std::vector<int> offsets{0};

  Segments() = default;
  explicit Segments(const std::vector<int>& lengths) {
    for (int len : lengths) push(len);
  }

  void push(int length) { offsets.push_back(offsets.back() + length); }
  int count() const { return static_cast<int>(offsets.size()) - 1; }
  int total() const { return offsets.back(); }
  int begin(int i) const { return offsets[i]; }
  int length(int i) const { return offsets[i + 1] - offsets[i]; }

  /// Segment index of every packed row.
  std::vector<int> row_owner() const {
    std::vector<int> owner(total());
    for (int s = 0; s < count(); ++s)
      for (int r = offsets[s]; r < offsets[s + 1]; ++r) owner[r] = s;
    return owner;
  }
};

}  // namespace prosody
