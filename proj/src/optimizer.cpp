#include "hierolm/optimizer.hpp"

#include <cmath>
#include <string>

namespace hierolm {

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw Error(ErrorCode::kInvalidArgument, "unknown optimizer '" + std::string(name) + "' (adam, sgd)");
}

template <typename T>
double global_grad_norm(std::span<const Parameter<T>> params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (T g : p.grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(std::span<Parameter<T>> params, double max_norm) {
  const double norm = global_grad_norm(std::span<const Parameter<T>>(params.data(), params.size()));
  if (!std::isfinite(norm)) {
    std::string bad;
    for (const auto& p : params)
      if (!p.grad.all_finite()) bad += (bad.empty() ? "" : ", ") + p.name;
    throw Error(ErrorCode::kNonFiniteGradient, "gradient norm is " + std::to_string(norm) + "; non-finite entries in " +
                                                   (bad.empty() ? std::string("(overflow)") : bad));
  }
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      for (T& g : p.grad.values()) g *= scale;
  }
  return norm;
}

template <typename T>
double Optimizer<T>::step(std::span<Parameter<T>> params, double lr, double clip_norm) {
  const double norm = clip_gradients(params, clip_norm);
  ++steps_;
  if (kind_ == OptimizerKind::kSgd) {
    const T rate = static_cast<T>(lr);
    for (auto& p : params)
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value.data()[k] -= rate * p.grad.data()[k];
    return norm;
  }
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(kBeta1), b2 = static_cast<T>(kBeta2);
  const T step_size = static_cast<T>(lr / (1.0 - std::pow(kBeta1, t)));
  const T v_correction = static_cast<T>(1.0 / (1.0 - std::pow(kBeta2, t)));
  const T eps = static_cast<T>(kEpsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* __restrict value = params[i].value.data();
    const T* __restrict grad = params[i].grad.data();
    T* __restrict m = m_[i].data();
    T* __restrict v = v_[i].data();
    for (std::size_t k = 0; k < params[i].value.size(); ++k) {
      const T g = grad[k];
      m[k] = b1 * m[k] + (T{1} - b1) * g;
      v[k] = b2 * v[k] + (T{1} - b2) * g * g;
      value[k] -= step_size * m[k] / (std::sqrt(v[k] * v_correction) + eps);
    }
  }
  return norm;
}

template double global_grad_norm<float>(std::span<const Parameter<float>>);
template double global_grad_norm<double>(std::span<const Parameter<double>>);
template double clip_gradients<float>(std::span<Parameter<float>>, double);
template double clip_gradients<double>(std::span<Parameter<double>>, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace hierolm
