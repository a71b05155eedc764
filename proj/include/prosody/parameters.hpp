#pragma once

#include "prosody/linalg.hpp"
#include "prosody/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace prosody {

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Named, insertion-ordered parameter storage. Addresses are stable for the
/// lifetime of the set, so modules may hold raw pointers into it.
template <class T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Matrix<T> init);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// All parameters whose name starts with `prefix`, in insertion order.
  std::vector<Parameter<T>*> with_prefix(const std::string& prefix);
  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  std::size_t size() const { return params_.size(); }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Normal(0, std^2) initialized matrix.
template <class T>
Matrix<T> random_normal(int rows, int cols, double stddev, Rng& rng);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
  /// Decoupled (AdamW-style) decay; multiplied by the learning rate.
  double weight_decay = 0.0;
};

/// Adam over a fixed list of parameters.
template <class T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamOptions options);

  /// Applies one update from the accumulated gradients. Returns the
  /// pre-clip global gradient norm.
  double step();
  long steps_taken() const { return t_; }
  /// Multiplies the learning rate of one managed parameter.
  void set_lr_scale(const Parameter<T>& p, double scale);
  void exclude_from_decay(const Parameter<T>& p);

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Matrix<T>> m_, v_;
  std::vector<T> lr_scale_;
  std::vector<T> decay_;
  AdamOptions options_;
  long t_ = 0;
};

}  // namespace prosody
