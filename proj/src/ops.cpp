#include "hierolm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hierolm {
namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + detail);
}

template <typename T>
std::string shapes(const Matrix<T>& a, const Matrix<T>& b) {
  return a.shape_string() + " vs " + b.shape_string();
}

}  // namespace

template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate) {
  require(a.cols() == b.rows(), "matmul", shapes(a, b));
  if (accumulate) {
    require(out.rows() == a.rows() && out.cols() == b.cols(), "matmul", "accumulator " + out.shape_string());
  } else {
    out.resize(a.rows(), b.cols());
  }
  const std::size_t n = a.cols();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* __restrict orow = out.data() + i * m;
    const T* arow = a.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) {
      const T aik = arow[k];
      if (aik == T{0}) continue;
      const T* __restrict brow = b.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
}

template <typename T>
void matmul_tn_accumulate(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
  require(a.rows() == b.rows(), "matmul_tn", shapes(a, b));
  require(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn", "accumulator " + out.shape_string());
  const std::size_t m = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const T* arow = a.data() + r * a.cols();
    const T* __restrict brow = b.data() + r * m;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T ark = arow[k];
      if (ark == T{0}) continue;
      T* __restrict orow = out.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += ark * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate) {
  require(a.cols() == b.cols(), "matmul_nt", shapes(a, b));
  matmul(a, transpose(b), out, accumulate);
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

template <typename T>
void add_row_broadcast(Matrix<T>& out, const Matrix<T>& bias) {
  require(bias.rows() == 1 && bias.cols() == out.cols(), "bias", shapes(out, bias));
  const T* __restrict b = bias.data();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    T* __restrict row = out.data() + i * out.cols();
    for (std::size_t j = 0; j < out.cols(); ++j) row[j] += b[j];
  }
}

template <typename T>
void accumulate_column_sums(const Matrix<T>& d, Matrix<T>& db) {
  require(db.rows() == 1 && db.cols() == d.cols(), "column_sums", shapes(d, db));
  T* __restrict acc = db.data();
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const T* __restrict row = d.data() + i * d.cols();
    for (std::size_t j = 0; j < d.cols(); ++j) acc[j] += row[j];
  }
}

template <typename T>
Matrix<T> affine_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> out;
  matmul(x, w, out);
  add_row_broadcast(out, b);
  return out;
}

template <typename T>
AffineGrads<T> affine_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dout) {
  require(x.rows() == dout.rows() && w.cols() == dout.cols() && x.cols() == w.rows(), "affine_backward",
          x.shape_string() + " * " + w.shape_string() + " -> " + dout.shape_string());
  AffineGrads<T> g;
  matmul_nt(dout, w, g.dx);
  g.dw.resize(w.rows(), w.cols());
  matmul_tn_accumulate(x, dout, g.dw);
  g.db.resize(1, w.cols());
  accumulate_column_sums(dout, g.db);
  return g;
}

template <typename T>
Matrix<T> sigmoid_forward(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = T{1} / (T{1} + std::exp(-x.data()[i]));
  return y;
}

template <typename T>
Matrix<T> sigmoid_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  require(y.same_shape(dy), "sigmoid_backward", shapes(y, dy));
  Matrix<T> dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T s = y.data()[i];
    dx.data()[i] = dy.data()[i] * s * (T{1} - s);
  }
  return dx;
}

template <typename T>
Matrix<T> tanh_forward(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = std::tanh(x.data()[i]);
  return y;
}

template <typename T>
Matrix<T> tanh_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  require(y.same_shape(dy), "tanh_backward", shapes(y, dy));
  Matrix<T> dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T t = y.data()[i];
    dx.data()[i] = dy.data()[i] * (T{1} - t * t);
  }
  return dx;
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  require(a.same_shape(b), "hadamard", shapes(a, b));
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

template <typename T>
double log_sum_exp(std::span<const T> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(sum);
}

template <typename T>
void softmax_row(std::span<const T> logits, std::span<double> probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    probs[j] = std::exp(static_cast<double>(logits[j]) - mx);
    sum += probs[j];
  }
  for (double& p : probs) p /= sum;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  std::vector<double> probs(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    softmax_row(logits.row(i), std::span<double>(probs));
    auto row = out.row(i);
    for (std::size_t j = 0; j < probs.size(); ++j) row[j] = static_cast<T>(probs[j]);
  }
  return out;
}

template <typename T>
XentResult<T> softmax_xent(const Matrix<T>& logits, std::span<const std::int32_t> targets,
                           std::span<const std::uint8_t> mask, Reduction reduction, bool want_grad) {
  if (targets.size() != logits.rows())
    throw Error(ErrorCode::kShapeMismatch, "softmax_xent: " + std::to_string(targets.size()) +
                                               " targets for " + logits.shape_string() + " logits");
  if (!mask.empty() && mask.size() != logits.rows())
    throw Error(ErrorCode::kShapeMismatch, "softmax_xent: mask length");
  const std::size_t vocab = logits.cols();

  XentResult<T> result;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab)
      throw Error(ErrorCode::kInvalidArgument, "softmax_xent: target out of range");
    ++result.count;
  }
  if (result.count == 0) throw Error(ErrorCode::kAllMasked, "softmax_xent: every row is masked");

  const double scale = reduction == Reduction::kMean ? 1.0 / static_cast<double>(result.count) : 1.0;
  if (want_grad) result.dlogits.resize(logits.rows(), vocab);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    const auto target = static_cast<std::size_t>(targets[i]);
    result.loss_sum += lse - static_cast<double>(row[target]);
    if (want_grad) {
      auto drow = result.dlogits.row(i);
      for (std::size_t j = 0; j < vocab; ++j) {
        const double p = std::exp(static_cast<double>(row[j]) - lse);
        drow[j] = static_cast<T>((p - (j == target ? 1.0 : 0.0)) * scale);
      }
    }
  }
  result.loss = result.loss_sum * scale;
  return result;
}

GradCheckResult grad_check(const std::function<double()>& loss, const std::function<void()>& analytic,
                           std::span<Parameter<double>* const> params, double eps) {
  analytic();
  GradCheckResult result;
  for (Parameter<double>* p : params) {
    for (std::size_t idx = 0; idx < p->value.size(); ++idx) {
      double& theta = p->value.data()[idx];
      const double saved = theta;
      theta = saved + eps;
      const double plus = loss();
      theta = saved - eps;
      const double minus = loss();
      theta = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = p->grad.data()[idx];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.checked;
      if (result.checked == 1 || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = p->name;
        result.worst_index = idx;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

#define HIEROLM_INSTANTIATE_OPS(T)                                                                   \
  template void matmul<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                    \
  template void matmul_tn_accumulate<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&);            \
  template void matmul_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                 \
  template Matrix<T> transpose<T>(const Matrix<T>&);                                                \
  template void add_row_broadcast<T>(Matrix<T>&, const Matrix<T>&);                                 \
  template void accumulate_column_sums<T>(const Matrix<T>&, Matrix<T>&);                            \
  template Matrix<T> affine_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);       \
  template AffineGrads<T> affine_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&); \
  template Matrix<T> sigmoid_forward<T>(const Matrix<T>&);                                          \
  template Matrix<T> sigmoid_backward<T>(const Matrix<T>&, const Matrix<T>&);                       \
  template Matrix<T> tanh_forward<T>(const Matrix<T>&);                                             \
  template Matrix<T> tanh_backward<T>(const Matrix<T>&, const Matrix<T>&);                          \
  template Matrix<T> hadamard<T>(const Matrix<T>&, const Matrix<T>&);                               \
  template Matrix<T> softmax_rows<T>(const Matrix<T>&);                                             \
  template void softmax_row<T>(std::span<const T>, std::span<double>);                              \
  template double log_sum_exp<T>(std::span<const T>);                                               \
  template XentResult<T> softmax_xent<T>(const Matrix<T>&, std::span<const std::int32_t>,            \
                                         std::span<const std::uint8_t>, Reduction, bool);

HIEROLM_INSTANTIATE_OPS(float)
HIEROLM_INSTANTIATE_OPS(double)

}  // namespace hierolm
