#include "prosody/layers.hpp"

#include <cmath>

namespace prosody {

template <class T>
Conv1d<T> Conv1d<T>::make(ParameterSet<T>& store, const std::string& name, int in, int out, int kernel, Rng& rng,
                          int dilation, bool zero_init, bool with_bias) {
  Conv1d c;
  c.kernel = kernel;
  c.dilation = dilation;
  const int fan_in = kernel * in;
  c.weight = &store.add(name + ".w", zero_init ? Matrix<T>::Zero(fan_in, out)
                                                 : random_normal<T>(fan_in, out, 1.0 / std::sqrt(fan_in), rng));
  if (with_bias) c.bias = &store.add(name + ".b", Matrix<T>::Zero(1, out));
  return c;
}

template <class T>
Var<T> Conv1d<T>::operator()(Var<T> x, const Segments& seg) const {
  Tape<T>& t = *x.tape;
  Var<T> in = kernel == 1 ? x : im2col(x, seg, kernel, dilation);
  Var<T> y = matmul(in, t.parameter(*weight));
  return bias ? add_row(y, t.parameter(*bias)) : y;
}

template <class T>
AffineNorm<T> AffineNorm<T>::make(ParameterSet<T>& store, const std::string& name, int dim) {
  AffineNorm n;
  n.gain = &store.add(name + ".gain", Matrix<T>::Ones(1, dim));
  n.bias = &store.add(name + ".bias", Matrix<T>::Zero(1, dim));
  return n;
}

template <class T>
Var<T> AffineNorm<T>::operator()(Var<T> x) const {
  Tape<T>& t = *x.tape;
  return add_row(mul_row(layer_norm(x), t.parameter(*gain)), t.parameter(*bias));
}

template struct Conv1d<float>;
template struct Conv1d<double>;
template struct AffineNorm<float>;
template struct AffineNorm<double>;

}  // namespace prosody
