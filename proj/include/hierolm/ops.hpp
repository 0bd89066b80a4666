#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hierolm/matrix.hpp"

namespace hierolm {

// Matrix products. Each output row depends only on the matching input row and
// the inner dimension is always reduced in ascending order, so results are
// bitwise identical regardless of how many rows are batched together.

/// out = a * b, or out += a * b when accumulate is set.
template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false);

/// out += a^T * b
template <typename T>
void matmul_tn_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out);

/// out = a * b^T, or out += a * b^T when accumulate is set.
template <typename T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false);

template <typename T>
Matrix<T> transpose(const Matrix<T>& m);

/// Adds the 1 x cols row vector `bias` to every row of `out`.
template <typename T>
void add_row_broadcast(Matrix<T>& out, const Matrix<T>& bias);

/// db += column sums of d.
template <typename T>
void accumulate_column_sums(const Matrix<T>& d, Matrix<T>& db);

/// out = x W + b, with b a 1 x m row broadcast over the rows of x.
template <typename T>
Matrix<T> affine_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b);

template <typename T>
struct AffineGrads {
  Matrix<T> dx;
  Matrix<T> dw;
  Matrix<T> db;
};

template <typename T>
AffineGrads<T> affine_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dout);

template <typename T>
Matrix<T> sigmoid_forward(const Matrix<T>& x);
/// Takes the forward output y = sigmoid(x); returns dy * y * (1 - y).
template <typename T>
Matrix<T> sigmoid_backward(const Matrix<T>& y, const Matrix<T>& dy);

template <typename T>
Matrix<T> tanh_forward(const Matrix<T>& x);
/// Takes the forward output y = tanh(x); returns dy * (1 - y^2).
template <typename T>
Matrix<T> tanh_backward(const Matrix<T>& y, const Matrix<T>& dy);

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b);

/// Row-wise softmax with max subtraction.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits);

/// Stable softmax of one row, computed in double.
template <typename T>
void softmax_row(std::span<const T> logits, std::span<double> probs);

/// Stable log-sum-exp of one row, computed in double.
template <typename T>
double log_sum_exp(std::span<const T> logits);

template <typename T>
void softmax_row(std::span<T> logits, std::span<double> probs) {
  softmax_row(std::span<const T>(logits), probs);
}

template <typename T>
double log_sum_exp(std::span<T> logits) {
  return log_sum_exp(std::span<const T>(logits));
}

enum class Reduction { kMean, kSum };

template <typename T>
struct XentResult {
  double loss = 0.0;      // mean or sum over unmasked rows, in nats
  double loss_sum = 0.0;  // always the sum
  std::size_t count = 0;  // unmasked rows
  Matrix<T> dlogits;      // zero on masked rows
};

/// Softmax cross-entropy. `mask` may be empty (all rows active); otherwise a
/// nonzero entry marks a row that contributes to the loss. Throws AllMasked
/// when no row is active.
template <typename T>
XentResult<T> softmax_xent(const Matrix<T>& logits, std::span<const std::int32_t> targets,
                           std::span<const std::uint8_t> mask = {},
                           Reduction reduction = Reduction::kMean, bool want_grad = true);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) on every component of every parameter.
/// `analytic` must leave the gradient of `loss` in each parameter's grad.
/// Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const std::function<double()>& loss, const std::function<void()>& analytic,
                           std::span<Parameter<double>* const> params, double eps = 1e-5);

}  // namespace hierolm
