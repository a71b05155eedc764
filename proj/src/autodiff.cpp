#include "prosody/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace prosody {

// --- Tape -----------------------------------------------------------------

template <class T>
Var<T> Tape<T>::constant(Matrix<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var<T> Tape<T>::record(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
  return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <class T>
Var<T> Tape<T>::record(Matrix<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error("autodiff: mixing tapes");
      n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <class T>
const Matrix<T>& Tape<T>::value(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

template <class T>
Matrix<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(value(id).rows(), value(id).cols());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  if (!record_) throw std::logic_error("autodiff: backward on a non-recording tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::logic_error("autodiff: backward root must be 1x1");
  if (!nodes_[root.id].needs_grad) return;
  nodes_[root.id].grad = Matrix<T>::Ones(1, 1);
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param)
      n.param->grad += n.grad;
    else if (n.backward)
      n.backward(*this, id);
  }
}

namespace {

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

template <class T>
void check_row(const Var<T>& a, const Var<T>& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument(std::string(op) + ": bad row shape");
}

}  // namespace

// --- elementwise / linear algebra ---------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix<T> out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * t.value(b.id).transpose());
    if (t.needs_grad(b.id)) t.accumulate(b.id, t.value(a.id).transpose() * g);
  });
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix<T> out = a.value() * b.value().transpose();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * t.value(b.id));
    if (t.needs_grad(b.id)) t.accumulate(b.id, g.transpose() * t.value(a.id));
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Matrix<T> out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    t.accumulate(a.id, t.grad(self));
    t.accumulate(b.id, t.grad(self));
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  Matrix<T> out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    t.accumulate(a.id, t.grad(self));
    t.accumulate(b.id, -t.grad(self));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "mul");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) t.accumulate(a.id, g.cwiseProduct(t.value(b.id)));
    if (t.needs_grad(b.id)) t.accumulate(b.id, g.cwiseProduct(t.value(a.id)));
  });
}

template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  check_row(a, row, "add_row");
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape<T>& t, int self) {
    t.accumulate(a.id, t.grad(self));
    if (t.needs_grad(row.id)) t.accumulate(row.id, t.grad(self).colwise().sum());
  });
}

template <class T>
Var<T> mul_row(Var<T> a, Var<T> row) {
  check_row(a, row, "mul_row");
  Matrix<T> out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(a.id)) {
      Matrix<T> ga = g.array().rowwise() * t.value(row.id).row(0).array();
      t.accumulate(a.id, ga);
    }
    if (t.needs_grad(row.id)) t.accumulate(row.id, g.cwiseProduct(t.value(a.id)).colwise().sum());
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Matrix<T> out = a.value() * s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& t, int self) { t.accumulate(a.id, t.grad(self) * s); });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Matrix<T> out = a.value().array() + s;
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, int self) { t.accumulate(a.id, t.grad(self)); });
}

template <class T>
Var<T> sum_all(Var<T> a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, int self) {
    const T g = t.grad(self)(0, 0);
    t.accumulate(a.id, Matrix<T>::Constant(t.value(a.id).rows(), t.value(a.id).cols(), g));
  });
}

template <class T>
Var<T> gelu(Var<T> a) {
  // tanh approximation
  static constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T k = T(0.044715);
  const auto& x = a.value().array();
  Matrix<T> th = (c * (x + k * x.cube())).tanh();
  Matrix<T> out = (T(0.5) * x * (T(1) + th.array())).matrix();
  return a.tape->record(std::move(out), {a}, [a, th = std::move(th)](Tape<T>& t, int self) {
    const auto& x = t.value(a.id).array();
    const auto tha = th.array();
    Matrix<T> d = T(0.5) * (T(1) + tha) + T(0.5) * x * (T(1) - tha.square()) * c * (T(1) + T(3) * k * x.square());
    t.accumulate(a.id, t.grad(self).cwiseProduct(d));
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, int self) {
    Matrix<T> g = (t.value(a.id).array() > T(0)).select(t.grad(self), T(0));
    t.accumulate(a.id, g);
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Matrix<T> out = a.value().array().tanh();
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, int self) {
    const auto& y = t.value(self).array();
    t.accumulate(a.id, (t.grad(self).array() * (T(1) - y.square())).matrix());
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Matrix<T> out = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  return a.tape->record(std::move(out), {a}, [a](Tape<T>& t, int self) {
    const auto& y = t.value(self).array();
    t.accumulate(a.id, (t.grad(self).array() * y * (T(1) - y)).matrix());
  });
}

template <class T>
Var<T> dropout(Var<T> a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  Matrix<T> mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? T(0) : keep;
  Matrix<T> out = a.value().cwiseProduct(mask);
  return a.tape->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape<T>& t, int self) {
    t.accumulate(a.id, t.grad(self).cwiseProduct(mask));
  });
}

template <class T>
Var<T> layer_norm(Var<T> a, T eps) {
  const auto& x = a.value();
  const Eigen::Index n = x.cols();
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv(x.rows());
  Matrix<T> out(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().sum() / static_cast<T>(n);
    inv(r) = T(1) / std::sqrt(var + eps);
    out.row(r) = (x.row(r).array() - mu) * inv(r);
  }
  return a.tape->record(std::move(out), {a}, [a, inv = std::move(inv)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    const T n = static_cast<T>(y.cols());
    Matrix<T> gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const T mg = g.row(r).sum() / n;
      const T mgy = g.row(r).dot(y.row(r)) / n;
      gx.row(r) = inv(r) * (g.row(r).array() - mg - y.row(r).array() * mgy);
    }
    t.accumulate(a.id, gx);
  });
}

template <class T>
Var<T> l2_normalize_rows(Var<T> a) {
  const auto& x = a.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = x.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r)
    if (!(norms(r) > T(0))) throw std::domain_error("l2_normalize_rows: zero-norm row " + std::to_string(r));
  Matrix<T> out = x.array().colwise() / norms.array();
  return a.tape->record(std::move(out), {a}, [a, norms = std::move(norms)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = g.cwiseProduct(y).rowwise().sum();
    Matrix<T> gx = (g.array() - y.array().colwise() * dots.array()).colwise() / norms.array();
    t.accumulate(a.id, gx);
  });
}

// --- indexing -------------------------------------------------------------

template <class T>
Var<T> gather_rows(Var<T> a, std::vector<int> index) {
  const auto& x = a.value();
  Matrix<T> out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
  }
  return a.tape->record(std::move(out), {a}, [a, index = std::move(index)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

template <class T>
Var<T> segment_mean(Var<T> a, std::vector<int> group, int n_groups) {
  const auto& x = a.value();
  if (static_cast<Eigen::Index>(group.size()) != x.rows()) throw std::invalid_argument("segment_mean: group size");
  std::vector<int> count(n_groups, 0);
  Matrix<T> out = Matrix<T>::Zero(n_groups, x.cols());
  for (std::size_t r = 0; r < group.size(); ++r) {
    if (group[r] < 0 || group[r] >= n_groups) throw std::out_of_range("segment_mean: group out of range");
    out.row(group[r]) += x.row(static_cast<Eigen::Index>(r));
    ++count[group[r]];
  }
  for (int g = 0; g < n_groups; ++g) {
    if (count[g] == 0) throw std::invalid_argument("segment_mean: group " + std::to_string(g) + " is empty");
    out.row(g) /= static_cast<T>(count[g]);
  }
  return a.tape->record(std::move(out), {a},
                        [a, group = std::move(group), count = std::move(count)](Tape<T>& t, int self) {
                          const auto& g = t.grad(self);
                          auto& ga = t.grad_buffer(a.id);
                          for (std::size_t r = 0; r < group.size(); ++r)
                            ga.row(static_cast<Eigen::Index>(r)) += g.row(group[r]) / static_cast<T>(count[group[r]]);
                        });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts[0].tape->record(std::move(out), parts, [parts](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      const Eigen::Index w = t.value(p.id).cols();
      if (t.needs_grad(p.id)) t.accumulate(p.id, g.middleCols(c, w));
      c += w;
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, int start, int n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw std::out_of_range("slice_cols: range");
  Matrix<T> out = a.value().middleCols(start, n);
  return a.tape->record(std::move(out), {a}, [a, start, n](Tape<T>& t, int self) {
    t.grad_buffer(a.id).middleCols(start, n) += t.grad(self);
  });
}

template <class T>
Var<T> im2col(Var<T> a, const Segments& seg, int kernel, int dilation) {
  const auto& x = a.value();
  if (seg.total() != x.rows()) throw std::invalid_argument("im2col: segments do not cover input");
  const Eigen::Index c = x.cols();
  const int half = (kernel - 1) / 2;
  Matrix<T> out = Matrix<T>::Zero(x.rows(), kernel * c);
  for (int s = 0; s < seg.count(); ++s) {
    const int b = seg.begin(s), len = seg.length(s);
    for (int j = 0; j < kernel; ++j) {
      const int shift = (j - half) * dilation;
      const int lo = std::max(0, -shift), hi = std::min(len, len - shift);
      if (hi > lo) out.block(b + lo, j * c, hi - lo, c) = x.middleRows(b + lo + shift, hi - lo);
    }
  }
  return a.tape->record(std::move(out), {a}, [a, seg, kernel, dilation, half, c](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(a.id);
    for (int s = 0; s < seg.count(); ++s) {
      const int b = seg.begin(s), len = seg.length(s);
      for (int j = 0; j < kernel; ++j) {
        const int shift = (j - half) * dilation;
        const int lo = std::max(0, -shift), hi = std::min(len, len - shift);
        if (hi > lo) ga.middleRows(b + lo + shift, hi - lo) += g.block(b + lo, j * c, hi - lo, c);
      }
    }
  });
}

// --- fused ops ------------------------------------------------------------

template <class T>
Var<T> relative_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> rel_keys, const Segments& seg, int n_heads,
                          int clip) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  const auto& R = rel_keys.value();
  const int d = static_cast<int>(Q.cols());
  if (d % n_heads != 0) throw std::invalid_argument("relative_attention: d not divisible by heads");
  if (K.cols() != d || V.cols() != d || R.cols() != d || R.rows() != 2 * clip + 1)
    throw std::invalid_argument("relative_attention: shape mismatch");
  if (seg.total() != Q.rows()) throw std::invalid_argument("relative_attention: segments do not cover input");
  const int dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  probs->reserve(static_cast<std::size_t>(seg.count() * n_heads));
  Matrix<T> out(Q.rows(), d);
  for (int s = 0; s < seg.count(); ++s) {
    const int b = seg.begin(s), len = seg.length(s);
    for (int h = 0; h < n_heads; ++h) {
      auto Qh = Q.block(b, h * dh, len, dh);
      auto Kh = K.block(b, h * dh, len, dh);
      auto Vh = V.block(b, h * dh, len, dh);
      Matrix<T> logits = Qh * Kh.transpose();
      Matrix<T> qr = Qh * R.middleCols(h * dh, dh).transpose();
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j) logits(i, j) += qr(i, std::clamp(j - i, -clip, clip) + clip);
      logits *= inv_sqrt;
      for (int i = 0; i < len; ++i) {
        const T m = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - m).exp();
        logits.row(i) /= logits.row(i).sum();
      }
      out.block(b, h * dh, len, dh) = logits * Vh;
      probs->push_back(std::move(logits));
    }
  }
  return q.tape->record(
      std::move(out), {q, k, v, rel_keys}, [q, k, v, rel_keys, seg, n_heads, clip, dh, inv_sqrt, probs](Tape<T>& t, int self) {
        const auto& G = t.grad(self);
        const auto& Q = t.value(q.id);
        const auto& K = t.value(k.id);
        const auto& V = t.value(v.id);
        const auto& R = t.value(rel_keys.id);
        auto& gQ = t.grad_buffer(q.id);
        auto& gK = t.grad_buffer(k.id);
        auto& gV = t.grad_buffer(v.id);
        const bool want_r = t.needs_grad(rel_keys.id);
        Matrix<T>* gR = want_r ? &t.grad_buffer(rel_keys.id) : nullptr;
        std::size_t idx = 0;
        for (int s = 0; s < seg.count(); ++s) {
          const int b = seg.begin(s), len = seg.length(s);
          for (int h = 0; h < n_heads; ++h, ++idx) {
            const Matrix<T>& A = (*probs)[idx];
            auto Gh = G.block(b, h * dh, len, dh);
            auto Qh = Q.block(b, h * dh, len, dh);
            auto Kh = K.block(b, h * dh, len, dh);
            auto Vh = V.block(b, h * dh, len, dh);
            Matrix<T> dA = Gh * Vh.transpose();
            gV.block(b, h * dh, len, dh) += A.transpose() * Gh;
            Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dA.cwiseProduct(A).rowwise().sum();
            Matrix<T> dL = (A.array() * (dA.array().colwise() - rowdot.array())).matrix() * inv_sqrt;
            Matrix<T> dqr = Matrix<T>::Zero(len, 2 * clip + 1);
            for (int i = 0; i < len; ++i)
              for (int j = 0; j < len; ++j) dqr(i, std::clamp(j - i, -clip, clip) + clip) += dL(i, j);
            auto Rh = R.middleCols(h * dh, dh);
            gQ.block(b, h * dh, len, dh) += dL * Kh + dqr * Rh;
            gK.block(b, h * dh, len, dh) += dL.transpose() * Qh;
            if (gR) gR->middleCols(h * dh, dh) += dqr.transpose() * Qh;
          }
        }
      });
}

template <class T>
Var<T> attentive_stats_pool(Var<T> h, Var<T> logits, const Segments& seg, T eps) {
  const auto& H = h.value();
  const auto& E = logits.value();
  check_same_shape(h, logits, "attentive_stats_pool");
  if (seg.total() != H.rows()) throw std::invalid_argument("attentive_stats_pool: segments do not cover input");
  const Eigen::Index c = H.cols();
  const T sqrt_eps = std::sqrt(eps);
  auto alpha = std::make_shared<Matrix<T>>(H.rows(), c);
  Matrix<T> out(seg.count(), 2 * c);
  for (int s = 0; s < seg.count(); ++s) {
    const int b = seg.begin(s), len = seg.length(s);
    if (len == 0) throw std::invalid_argument("attentive_stats_pool: empty segment");
    auto Eh = E.middleRows(b, len);
    auto Hh = H.middleRows(b, len);
    Eigen::Matrix<T, 1, Eigen::Dynamic> m = Eh.colwise().maxCoeff();
    Matrix<T> a = (Eh.rowwise() - m).array().exp();
    Eigen::Matrix<T, 1, Eigen::Dynamic> z = a.colwise().sum();
    a.array().rowwise() /= z.array();
    Eigen::Matrix<T, 1, Eigen::Dynamic> mu = a.cwiseProduct(Hh).colwise().sum();
    Matrix<T> dev = Hh.rowwise() - mu;
    Eigen::Matrix<T, 1, Eigen::Dynamic> var = a.cwiseProduct(dev.cwiseProduct(dev)).colwise().sum();
    out.block(s, 0, 1, c) = mu;
    out.block(s, c, 1, c) = (var.array() + eps).sqrt() - sqrt_eps;
    alpha->middleRows(b, len) = a;
  }
  return h.tape->record(std::move(out), {h, logits}, [h, logits, seg, eps, alpha, c](Tape<T>& t, int self) {
    const auto& G = t.grad(self);
    const auto& H = t.value(h.id);
    const auto& O = t.value(self);
    Matrix<T> gH(H.rows(), c), gE(H.rows(), c);
    for (int s = 0; s < seg.count(); ++s) {
      const int b = seg.begin(s), len = seg.length(s);
      auto a = alpha->middleRows(b, len);
      auto Hh = H.middleRows(b, len);
      Eigen::Matrix<T, 1, Eigen::Dynamic> mu = O.block(s, 0, 1, c);
      Eigen::Matrix<T, 1, Eigen::Dynamic> sd = O.block(s, c, 1, c);
      Eigen::Matrix<T, 1, Eigen::Dynamic> g_mu = G.block(s, 0, 1, c);
      Eigen::Matrix<T, 1, Eigen::Dynamic> g_var =
          (G.block(s, c, 1, c).array() / (T(2) * (sd.array() + std::sqrt(eps)))).matrix();
      Matrix<T> dev = Hh.rowwise() - mu;
      Matrix<T> inner = (T(2) * dev.array()).rowwise() * g_var.array();
      gH.middleRows(b, len) = (a.array() * (inner.array().rowwise() + g_mu.array())).matrix();
      Matrix<T> g_alpha = (Hh.array().rowwise() * g_mu.array()) + (dev.array().square().rowwise() * g_var.array());
      Eigen::Matrix<T, 1, Eigen::Dynamic> dot = a.cwiseProduct(g_alpha).colwise().sum();
      gE.middleRows(b, len) = (a.array() * (g_alpha.rowwise() - dot).array()).matrix();
    }
    t.accumulate(h.id, gH);
    t.accumulate(logits.id, gE);
  });
}

template <class T>
Var<T> masked_cross_entropy(Var<T> logits, std::vector<int> labels) {
  const auto& X = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != X.rows())
    throw std::invalid_argument("masked_cross_entropy: label count");
  int n_valid = 0;
  T total = T(0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0) continue;
    if (labels[r] >= X.cols()) throw std::out_of_range("masked_cross_entropy: label out of range");
    const auto row = X.row(static_cast<Eigen::Index>(r));
    const T m = row.maxCoeff();
    const T lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(labels[r]);
    ++n_valid;
  }
  Matrix<T> out(1, 1);
  out(0, 0) = n_valid ? total / static_cast<T>(n_valid) : T(0);
  return logits.tape->record(std::move(out), {logits}, [logits, labels = std::move(labels), n_valid](Tape<T>& t, int self) {
    if (n_valid == 0) return;
    const T g = t.grad(self)(0, 0) / static_cast<T>(n_valid);
    const auto& X = t.value(logits.id);
    auto& gx = t.grad_buffer(logits.id);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (labels[r] < 0) continue;
      const auto row = X.row(static_cast<Eigen::Index>(r));
      const T m = row.maxCoeff();
      Eigen::Matrix<T, 1, Eigen::Dynamic> p = (row.array() - m).exp();
      p /= p.sum();
      p(labels[r]) -= T(1);
      gx.row(static_cast<Eigen::Index>(r)) += g * p;
    }
  });
}

namespace {

template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T logistic(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <class T>
Var<T> sigmoid_pair_loss(Var<T> sim, Var<T> scale_v, Var<T> bias) {
  const auto& S = sim.value();
  if (S.rows() != S.cols() || S.rows() == 0) throw std::invalid_argument("sigmoid_pair_loss: need square N x N, N >= 1");
  const T t_ = scale_v.scalar(), b_ = bias.scalar();
  const Eigen::Index n = S.rows();
  T total = T(0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const T z = i == j ? T(1) : T(-1);
      total += softplus(-z * (t_ * S(i, j) + b_));
    }
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(n);
  return sim.tape->record(std::move(out), {sim, scale_v, bias}, [sim, scale_v, bias](Tape<T>& t, int self) {
    const auto& S = t.value(sim.id);
    const T t_ = t.value(scale_v.id)(0, 0), b_ = t.value(bias.id)(0, 0);
    const Eigen::Index n = S.rows();
    const T g = t.grad(self)(0, 0) / static_cast<T>(n);
    Matrix<T> dl(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const T z = i == j ? T(1) : T(-1);
        dl(i, j) = -z * logistic(-z * (t_ * S(i, j) + b_)) * g;
      }
    if (t.needs_grad(sim.id)) t.accumulate(sim.id, dl * t_);
    Matrix<T> gt(1, 1), gb(1, 1);
    gt(0, 0) = dl.cwiseProduct(S).sum();
    gb(0, 0) = dl.sum();
    t.accumulate(scale_v.id, gt);
    t.accumulate(bias.id, gb);
  });
}

template <class T>
Var<T> symmetric_softmax_loss(Var<T> sim, Var<T> scale_v) {
  const auto& S = sim.value();
  if (S.rows() != S.cols() || S.rows() == 0) throw std::invalid_argument("symmetric_softmax_loss: need square matrix");
  const Eigen::Index n = S.rows();
  const T c = scale_v.scalar();
  Matrix<T> L = S * c;
  Matrix<T> prow(n, n), pcol(n, n);
  T total = T(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T m = L.row(i).maxCoeff();
    prow.row(i) = (L.row(i).array() - m).exp();
    const T z = prow.row(i).sum();
    prow.row(i) /= z;
    total += m + std::log(z) - L(i, i);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const T m = L.col(j).maxCoeff();
    pcol.col(j) = (L.col(j).array() - m).exp();
    const T z = pcol.col(j).sum();
    pcol.col(j) /= z;
    total += m + std::log(z) - L(j, j);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(2 * n);
  Matrix<T> dlogits = (prow + pcol - T(2) * Matrix<T>::Identity(n, n)) / static_cast<T>(2 * n);
  return sim.tape->record(std::move(out), {sim, scale_v}, [sim, scale_v, dlogits = std::move(dlogits)](Tape<T>& t, int self) {
    const T g = t.grad(self)(0, 0);
    const T c = t.value(scale_v.id)(0, 0);
    if (t.needs_grad(sim.id)) t.accumulate(sim.id, dlogits * (c * g));
    Matrix<T> gc(1, 1);
    gc(0, 0) = g * dlogits.cwiseProduct(t.value(sim.id)).sum();
    t.accumulate(scale_v.id, gc);
  });
}

// --- instantiation --------------------------------------------------------

#define PROSODY_INSTANTIATE(T)                                                                              \
  template class Tape<T>;                                                                                   \
  template struct Var<T>;                                                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                                                   \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                                \
  template Var<T> add(Var<T>, Var<T>);                                                                      \
  template Var<T> sub(Var<T>, Var<T>);                                                                      \
  template Var<T> mul(Var<T>, Var<T>);                                                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                                                  \
  template Var<T> mul_row(Var<T>, Var<T>);                                                                  \
  template Var<T> scale(Var<T>, T);                                                                         \
  template Var<T> add_scalar(Var<T>, T);                                                                    \
  template Var<T> sum_all(Var<T>);                                                                          \
  template Var<T> gelu(Var<T>);                                                                             \
  template Var<T> relu(Var<T>);                                                                             \
  template Var<T> tanh(Var<T>);                                                                             \
  template Var<T> sigmoid(Var<T>);                                                                          \
  template Var<T> dropout(Var<T>, double, Rng&);                                                            \
  template Var<T> layer_norm(Var<T>, T);                                                                    \
  template Var<T> l2_normalize_rows(Var<T>);                                                                \
  template Var<T> gather_rows(Var<T>, std::vector<int>);                                                    \
  template Var<T> segment_mean(Var<T>, std::vector<int>, int);                                              \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                                  \
  template Var<T> slice_cols(Var<T>, int, int);                                                             \
  template Var<T> im2col(Var<T>, const Segments&, int, int);                                                \
  template Var<T> relative_attention(Var<T>, Var<T>, Var<T>, Var<T>, const Segments&, int, int);           \
  template Var<T> attentive_stats_pool(Var<T>, Var<T>, const Segments&, T);                                 \
  template Var<T> masked_cross_entropy(Var<T>, std::vector<int>);                                           \
  template Var<T> sigmoid_pair_loss(Var<T>, Var<T>, Var<T>);                                                \
  template Var<T> symmetric_softmax_loss(Var<T>, Var<T>);

PROSODY_INSTANTIATE(float)
PROSODY_INSTANTIATE(double)

}  // namespace prosody
