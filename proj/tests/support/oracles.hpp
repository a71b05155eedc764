#pragma once

// Independent brute-force reference implementations used by the unit and
// acceptance tests.

#include "prosody/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace prosody::testing {

inline double cosine(const MatrixD& a, int i, const MatrixD& b, int j) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    dot += a(i, c) * b(j, c);
    na += a(i, c) * a(i, c);
    nb += b(j, c) * b(j, c);
  }
  return dot / std::sqrt(na * nb);
}

inline double siglip_oracle(const MatrixD& text, const MatrixD& audio, double t, double b) {
  const int n = static_cast<int>(text.rows());
  double total = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double z = i == j ? 1.0 : -1.0;
      total += std::log1p(std::exp(-z * (t * cosine(text, i, audio, j) + b)));
    }
  return total / n;
}

inline double clip_oracle(const MatrixD& text, const MatrixD& audio, double scale) {
  const int n = static_cast<int>(text.rows());
  std::vector<std::vector<double>> s(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s[i][j] = scale * cosine(text, i, audio, j);
  double rows = 0, cols = 0;
  for (int i = 0; i < n; ++i) {
    double zr = 0, zc = 0;
    for (int j = 0; j < n; ++j) zr += std::exp(s[i][j]), zc += std::exp(s[j][i]);
    rows += -(s[i][i] - std::log(zr));
    cols += -(s[i][i] - std::log(zc));
  }
  return (rows / n + cols / n) / 2;
}

inline double cross_entropy_oracle(const MatrixD& logits, const std::vector<int>& labels, int ignore) {
  double total = 0;
  int count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (labels[r] == ignore) continue;
    double z = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c));
    total += std::log(z) - logits(r, labels[r]);
    ++count;
  }
  return count ? total / count : 0.0;
}

/// Recall@k by fully sorting each row (ties: lower column first).
inline double recall_oracle_rows(const MatrixD& s, int k) {
  const int n = static_cast<int>(s.rows());
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s(i, a) > s(i, b); });
    hits += std::find(idx.begin(), idx.begin() + k, i) != idx.begin() + k;
  }
  return static_cast<double>(hits) / n;
}

inline MatrixD group_mean_oracle(const MatrixD& x, const std::vector<int>& group, int n_groups) {
  MatrixD out = MatrixD::Zero(n_groups, x.cols());
  for (int g = 0; g < n_groups; ++g) {
    int count = 0;
    for (std::size_t r = 0; r < group.size(); ++r)
      if (group[r] == g) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) out(g, c) += x(static_cast<Eigen::Index>(r), c);
        ++count;
      }
    out.row(g) /= count;
  }
  return out;
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-12);
}

}  // namespace prosody::testing
