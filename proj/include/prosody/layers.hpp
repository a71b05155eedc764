#pragma once

// Small parameterized building blocks shared by the encoders.

#include "prosody/autodiff.hpp"

#include <string>

namespace prosody {

/// 1-D convolution over the time axis of a packed batch (kernel 1 is a
/// pointwise linear map). Weight is [kernel*in x out].
template <class T>
struct Conv1d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  int kernel = 1;
  int dilation = 1;

  static Conv1d make(ParameterSet<T>& store, const std::string& name, int in, int out, int kernel, Rng& rng,
                     int dilation = 1, bool zero_init = false, bool with_bias = true);
  Var<T> operator()(Var<T> x, const Segments& seg) const;
};

/// LayerNorm with learned gain and bias.
template <class T>
struct AffineNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;

  static AffineNorm make(ParameterSet<T>& store, const std::string& name, int dim);
  Var<T> operator()(Var<T> x) const;
};

}  // namespace prosody
