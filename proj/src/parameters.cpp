#include "prosody/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace prosody {

template <class T>
Parameter<T>& ParameterSet<T>::add(const std::string& name, Matrix<T> init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Matrix<T>::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <class T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

template <class T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

template <class T>
std::vector<Parameter<T>*> ParameterSet<T>::with_prefix(const std::string& prefix) {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_)
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<Parameter<T>*> ParameterSet<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<const Parameter<T>*> ParameterSet<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

template <class T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <class T>
Matrix<T> random_normal(int rows, int cols, double stddev, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
  return m;
}

template <class T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (auto* p : params_) {
    m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
  }
  lr_scale_.assign(params_.size(), T(1));
  decay_.assign(params_.size(), static_cast<T>(options_.weight_decay));
}

template <class T>
void Adam<T>::set_lr_scale(const Parameter<T>& p, double scale) {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i] == &p) {
      lr_scale_[i] = static_cast<T>(scale);
      return;
    }
  throw std::invalid_argument("Adam::set_lr_scale: parameter '" + p.name + "' is not managed by this optimizer");
}

template <class T>
void Adam<T>::exclude_from_decay(const Parameter<T>& p) {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i] == &p) {
      decay_[i] = T(0);
      return;
    }
  throw std::invalid_argument("Adam::exclude_from_decay: parameter '" + p.name + "' is not managed by this optimizer");
}

template <class T>
double Adam<T>::step() {
  double sq = 0.0;
  for (auto* p : params_) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  T scale = T(1);
  if (options_.clip_norm > 0 && norm > options_.clip_norm) scale = static_cast<T>(options_.clip_norm / norm);

  ++t_;
  const T b1 = static_cast<T>(options_.beta1);
  const T b2 = static_cast<T>(options_.beta2);
  const T lr_t = static_cast<T>(options_.learning_rate * std::sqrt(1.0 - std::pow(options_.beta2, t_)) /
                                (1.0 - std::pow(options_.beta1, t_)));
  const T eps = static_cast<T>(options_.epsilon);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = (params_[i]->grad.array() * scale).eval();
    m_[i].array() = b1 * m_[i].array() + (T(1) - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (T(1) - b2) * g.square();
    if (decay_[i] != T(0))
      params_[i]->value *= T(1) - static_cast<T>(options_.learning_rate) * lr_scale_[i] * decay_[i];
    params_[i]->value.array() -= lr_t * lr_scale_[i] * m_[i].array() / (v_[i].array().sqrt() + eps);
  }
  return norm;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Adam<float>;
template class Adam<double>;
template Matrix<float> random_normal<float>(int, int, double, Rng&);
template Matrix<double> random_normal<double>(int, int, double, Rng&);

}  // namespace prosody
