#pragma once

// Central finite-difference gradient checking for double-precision graphs.

#include "prosody/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace prosody::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

/// Compares analytic gradients of every parameter in `params` against
/// central differences of `loss_fn` (a callable Tape<double>& -> Var<double>
/// returning a 1x1 loss). The error per tensor is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12).
template <class LossFn>
GradCheckResult check_gradients(ParameterSet<double>& params, LossFn&& loss_fn, double step = 1e-6) {
  params.zero_grad();
  {
    Tape<double> tape;
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  GradCheckResult result;
  for (auto* p : params.all()) {
    MatrixD numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + step;
      double up, down;
      {
        Tape<double> tape(false);
        up = loss_fn(tape).scalar();
      }
      x = saved - step;
      {
        Tape<double> tape(false);
        down = loss_fn(tape).scalar();
      }
      x = saved;
      numeric.data()[i] = (up - down) / (2 * step);
    }
    const double denom = std::max({p->grad.norm(), numeric.norm(), 1e-12});
    const double err = (p->grad - numeric).norm() / denom;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = p->name;
    }
  }
  return result;
}

/// Sum of a graph output weighted by fixed pseudo-random coefficients; a
/// generic scalar probe for checking gradients of matrix-valued ops.
inline Var<double> probe(Var<double> out, std::uint64_t seed = 7) {
  Rng rng(seed);
  MatrixD w(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  return sum_all(mul(out, out.tape->constant(std::move(w))));
}

}  // namespace prosody::testing
