#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "hierolm/matrix.hpp"

namespace hierolm {

enum class OptimizerKind { kAdam, kSgd };

std::string_view optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

/// L2 norm over every gradient entry of every parameter, accumulated in double.
template <typename T>
double global_grad_norm(std::span<const Parameter<T>> params);

/// Scales all gradients by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping. Throws NonFiniteGradient.
template <typename T>
double clip_gradients(std::span<Parameter<T>> params, double max_norm);

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected) or plain SGD.
/// Moment buffers persist across steps.
template <typename T>
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit Optimizer(OptimizerKind kind) : kind_(kind) {}

  OptimizerKind kind() const noexcept { return kind_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  const std::vector<Matrix<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Matrix<T>>& second_moments() const noexcept { return v_; }

  /// Clips (when clip_norm > 0) then applies one update at `lr`. Returns the
  /// pre-clip gradient norm.
  double step(std::span<Parameter<T>> params, double lr, double clip_norm);

 private:
  OptimizerKind kind_;
  std::uint64_t steps_ = 0;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
};

}  // namespace hierolm
