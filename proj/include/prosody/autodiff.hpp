#pragma once

// Reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation of one forward pass. Values live on the
// tape; Var is a lightweight handle. Parameters enter the tape by reference
// and receive their gradients when backward() runs. The library is
// instantiated for float (training) and double (gradient checking).

#include "prosody/linalg.hpp"
#include "prosody/parameters.hpp"
#include "prosody/rng.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <vector>

namespace prosody {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Matrix<T>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  /// With `record = false` no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value);
  Var<T> parameter(Parameter<T>& p);

  /// Registers the result of an op. `fn` is called during backward() with
  /// this node's id; it must push the node's gradient to its inputs.
  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward fn);
  Var<T> record(Matrix<T> value, const std::vector<Var<T>>& inputs, Backward fn);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every
  /// reachable node; parameter gradients are accumulated (+=).
  void backward(Var<T> root);

  const Matrix<T>& value(int id) const;
  const Matrix<T>& grad(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  template <class Expr>
  void accumulate(int id, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Gradient buffer of `id`, allocated as zeros on first use.
  Matrix<T>& grad_buffer(int id);

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Matrix<T> grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;  // stable addresses: value() references outlive later records
  bool record_;
};

template <class T>
const Matrix<T>& Var<T>::value() const {
  return tape->value(id);
}

// --- elementwise / linear algebra ---------------------------------------

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <class T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
/// Broadcasts a [1 x n] row over every row of a.
template <class T> Var<T> add_row(Var<T> a, Var<T> row);
template <class T> Var<T> mul_row(Var<T> a, Var<T> row);
template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> add_scalar(Var<T> a, T s);
template <class T> Var<T> sum_all(Var<T> a);

template <class T> Var<T> gelu(Var<T> a);
template <class T> Var<T> relu(Var<T> a);
template <class T> Var<T> tanh(Var<T> a);
template <class T> Var<T> sigmoid(Var<T> a);

/// Inverted dropout; identity when p == 0.
template <class T> Var<T> dropout(Var<T> a, double p, Rng& rng);

/// Per-row standardization without affine terms.
template <class T> Var<T> layer_norm(Var<T> a, T eps = T(1e-5));
template <class T> Var<T> l2_normalize_rows(Var<T> a);

// --- indexing -------------------------------------------------------------

/// out[i] = a[index[i]]; backward scatters.
template <class T> Var<T> gather_rows(Var<T> a, std::vector<int> index);
/// out[g] = mean of rows r with group[r] == g. Every group must be non-empty.
template <class T> Var<T> segment_mean(Var<T> a, std::vector<int> group, int n_groups);
template <class T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <class T> Var<T> slice_cols(Var<T> a, int start, int n);

/// Unfolds `kernel` time-shifted copies of every row side by side
/// ([N x C] -> [N x kernel*C]) with zero padding at segment boundaries.
/// Tap j reads row t + (j - (kernel-1)/2) * dilation.
template <class T> Var<T> im2col(Var<T> a, const Segments& seg, int kernel, int dilation = 1);

// --- fused ops ------------------------------------------------------------

/// Multi-head self-attention within each segment with learned relative key
/// embeddings. rel_keys is [(2*clip+1) x d]; the pair (i, j) adds
/// q_i . rel_keys[clamp(j - i, -clip, clip) + clip] (per head slice) to the
/// logit before the 1/sqrt(d_head) scaling.
template <class T>
Var<T> relative_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> rel_keys, const Segments& seg,
                          int n_heads, int clip);

/// Per segment and channel: softmax over time of `logits`, then the
/// weighted mean and standard deviation of `h`. Output [n_segments x 2C]
/// laid out as [mean | std]; std = sqrt(var + eps) - sqrt(eps), so a
/// zero-variance channel yields exactly zero.
template <class T>
Var<T> attentive_stats_pool(Var<T> h, Var<T> logits, const Segments& seg, T eps = T(1e-6));

/// Mean softmax cross-entropy over rows whose label is >= 0; rows labelled
/// negative are ignored and receive exactly zero gradient. Returns 0 when
/// no row carries a label.
template <class T> Var<T> masked_cross_entropy(Var<T> logits, std::vector<int> labels);

/// Pairwise sigmoid loss over a similarity matrix:
/// (1/N) sum_ij softplus(-z_ij (scale * s_ij + bias)), z = +1 on the diagonal.
template <class T> Var<T> sigmoid_pair_loss(Var<T> sim, Var<T> scale, Var<T> bias);

/// Symmetric softmax cross-entropy over scale * sim with diagonal targets,
/// averaged over the row and column directions.
template <class T> Var<T> symmetric_softmax_loss(Var<T> sim, Var<T> scale);

}  // namespace prosody
