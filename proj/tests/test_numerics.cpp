#include <cmath>
#include <limits>

#include "doctest.h"
#include "hierolm/error.hpp"
#include "hierolm/ops.hpp"
#include "support.hpp"

using namespace hierolm;

namespace {

Matrix<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

Parameter<double> random_param(const std::string& name, std::size_t r, std::size_t c, Rng& rng) {
  Parameter<double> p(name, r, c);
  for (auto& v : p.value.values()) v = rng.uniform(-1.0, 1.0);
  return p;
}

double weighted_sum(const Matrix<double>& m, const Matrix<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m.values()[i] * w.values()[i];
  return s;
}

void add_into(Matrix<double>& grad, const Matrix<double>& d) {
  for (std::size_t i = 0; i < d.size(); ++i) grad.values()[i] += d.values()[i];
}

}  // namespace

TEST_CASE("affine_forward examples") {
  const Matrix<double> x{{1, 2}}, w{{1, 0}, {0, 1}}, b{{0, 0}};
  CHECK(affine_forward(x, w, b) == Matrix<double>{{1, 2}});
  const Matrix<double> x2{{1, 1}}, w2{{2}, {3}}, b2{{1}};
  CHECK(affine_forward(x2, w2, b2) == Matrix<double>{{6}});
  CHECK_THROWS_AS(affine_forward(x, w2.cast<double>(), b), Error);
  try {
    affine_forward(Matrix<double>(2, 3), Matrix<double>(2, 2), Matrix<double>(1, 2));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("affine backward matches finite differences") {
  Rng rng(1);
  auto x = random_param("x", 3, 4, rng), w = random_param("W", 4, 5, rng), b = random_param("b", 1, 5, rng);
  const Matrix<double> r = random_matrix(3, 5, rng);
  auto loss = [&] { return weighted_sum(affine_forward(x.value, w.value, b.value), r); };
  auto analytic = [&] {
    const auto g = affine_backward(x.value, w.value, r);
    x.grad = g.dx;
    w.grad = g.dw;
    b.grad = g.db;
  };
  std::vector<Parameter<double>*> ps{&x, &w, &b};
  const auto res = grad_check(loss, analytic, ps, 1e-5);
  CHECK(res.checked == 12 + 20 + 5);
  CHECK(res.max_relative_error < 1e-6);
}

TEST_CASE("sigmoid and tanh values and symmetry") {
  const Matrix<double> zero{{0.0}};
  CHECK(sigmoid_forward(zero)(0, 0) == 0.5);
  CHECK(tanh_forward(zero)(0, 0) == 0.0);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.uniform(-20.0, 20.0);
    const Matrix<double> p{{v}}, n{{-v}};
    CHECK(sigmoid_forward(p)(0, 0) + sigmoid_forward(n)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  // Extreme inputs stay finite.
  const Matrix<float> big{{1000.0f, -1000.0f}};
  CHECK(sigmoid_forward(big).all_finite());
  CHECK(sigmoid_forward(big)(0, 0) == 1.0f);
  CHECK(sigmoid_forward(big)(0, 1) == 0.0f);
}

TEST_CASE("sigmoid, tanh and hadamard backward match finite differences") {
  Rng rng(3);
  auto x = random_param("x", 4, 6, rng);
  auto y = random_param("y", 4, 6, rng);
  const Matrix<double> r = random_matrix(4, 6, rng);

  std::vector<Parameter<double>*> px{&x};
  auto sig_loss = [&] { return weighted_sum(sigmoid_forward(x.value), r); };
  auto sig_grad = [&] { x.grad = sigmoid_backward(sigmoid_forward(x.value), r); };
  CHECK(grad_check(sig_loss, sig_grad, px).max_relative_error < 1e-6);

  auto tanh_loss = [&] { return weighted_sum(tanh_forward(x.value), r); };
  auto tanh_grad = [&] { x.grad = tanh_backward(tanh_forward(x.value), r); };
  CHECK(grad_check(tanh_loss, tanh_grad, px).max_relative_error < 1e-6);

  std::vector<Parameter<double>*> pxy{&x, &y};
  auto had_loss = [&] { return weighted_sum(hadamard(x.value, y.value), r); };
  auto had_grad = [&] {
    x.grad = hadamard(y.value, r);
    y.grad = hadamard(x.value, r);
  };
  CHECK(grad_check(had_loss, had_grad, pxy).max_relative_error < 1e-6);
}

TEST_CASE("softmax_xent examples") {
  const std::vector<std::int32_t> t2{2};
  const Matrix<double> uniform{{0, 0, 0, 0}};
  const auto u = softmax_xent(uniform, t2);
  CHECK(u.loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(u.loss == doctest::Approx(1.38629).epsilon(1e-5));

  double previous = u.loss;
  for (double big : {5.0, 20.0, 80.0, 400.0}) {
    const Matrix<double> m{{0, 0, big, 0}};
    const double l = softmax_xent(m, t2).loss;
    CHECK(l >= 0.0);
    if (big <= 20.0) CHECK(l < previous);
    CHECK(l <= previous);
    previous = l;
  }
  CHECK(previous < 1e-30);

  const std::vector<std::int32_t> t0{0};
  const Matrix<float> huge{{1000.0f, 0.0f}};
  const auto h = softmax_xent(huge, t0);
  CHECK(std::isfinite(h.loss));
  CHECK(h.loss == doctest::Approx(0.0));
  CHECK(h.dlogits.all_finite());
}

TEST_CASE("softmax_xent masking, reduction and errors") {
  const Matrix<double> logits{{1, 2, 3}, {0, 0, 0}, {3, 2, 1}};
  const std::vector<std::int32_t> targets{0, 1, 2};
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const auto mean = softmax_xent(logits, targets, mask);
  const auto sum = softmax_xent(logits, targets, mask, Reduction::kSum);
  CHECK(mean.count == 2);
  CHECK(sum.loss == doctest::Approx(2.0 * mean.loss));
  CHECK(sum.loss_sum == doctest::Approx(mean.loss_sum));
  for (std::size_t j = 0; j < 3; ++j) CHECK(mean.dlogits(1, j) == 0.0);
  // Gradient rows are (softmax - onehot) / count.
  std::vector<double> p(3);
  softmax_row(logits.row(0), std::span<double>(p));
  CHECK(mean.dlogits(0, 0) == doctest::Approx((p[0] - 1.0) / 2.0));
  CHECK(mean.dlogits(0, 2) == doctest::Approx(p[2] / 2.0));

  const std::vector<std::uint8_t> none{0, 0, 0};
  try {
    softmax_xent(logits, targets, none);
    FAIL("expected AllMasked");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kAllMasked);
  }
  const std::vector<std::int32_t> bad{0, 5, 1};
  CHECK_THROWS_AS(softmax_xent(logits, bad), Error);
}

TEST_CASE("softmax rows sum to one and the loss is shift invariant") {
  Rng rng(4);
  const Matrix<double> logits = random_matrix(8, 8, rng, 10.0);
  const auto probs = softmax_rows(logits);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double s = 0.0;
    for (double v : probs.row(r)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  std::vector<std::int32_t> targets(8);
  for (std::size_t i = 0; i < 8; ++i) targets[i] = static_cast<std::int32_t>(rng.below(8));
  Matrix<double> shifted = logits;
  for (std::size_t r = 0; r < 8; ++r) {
    const double c = rng.uniform(-100.0, 100.0);
    for (auto& v : shifted.row(r)) v += c;
  }
  CHECK(softmax_xent(shifted, targets).loss == doctest::Approx(softmax_xent(logits, targets).loss).epsilon(1e-6));
}

TEST_CASE("softmax_xent gradient and a composition pass grad_check") {
  Rng rng(5);
  auto x = random_param("x", 6, 5, rng), w = random_param("W", 5, 7, rng), b = random_param("b", 1, 7, rng);
  std::vector<std::int32_t> targets(6);
  for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(7));
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1};

  // xent(sigmoid(z) * tanh(z)) with z = x W + b
  auto forward = [&](Matrix<double>* a1, Matrix<double>* a2) {
    const auto z = affine_forward(x.value, w.value, b.value);
    *a1 = sigmoid_forward(z);
    *a2 = tanh_forward(z);
    return hadamard(*a1, *a2);
  };
  auto loss = [&] {
    Matrix<double> s, t;
    return softmax_xent(forward(&s, &t), targets, mask).loss;
  };
  auto analytic = [&] {
    Matrix<double> s, t;
    const auto logits = forward(&s, &t);
    const auto xent = softmax_xent(logits, targets, mask);
    const auto ds = sigmoid_backward(s, hadamard(xent.dlogits, t));
    const auto dt = tanh_backward(t, hadamard(xent.dlogits, s));
    Matrix<double> dz = ds;
    add_into(dz, dt);
    const auto g = affine_backward(x.value, w.value, dz);
    x.grad = g.dx;
    w.grad = g.dw;
    b.grad = g.db;
  };
  std::vector<Parameter<double>*> ps{&x, &w, &b};
  CHECK(grad_check(loss, analytic, ps).max_relative_error < 1e-4);

  auto logits_p = random_param("logits", 8, 8, rng);
  std::vector<std::int32_t> t8(8);
  for (auto& t : t8) t = static_cast<std::int32_t>(rng.below(8));
  std::vector<Parameter<double>*> pl{&logits_p};
  auto xl = [&] { return softmax_xent(logits_p.value, t8).loss; };
  auto xg = [&] { logits_p.grad = softmax_xent(logits_p.value, t8).dlogits; };
  CHECK(grad_check(xl, xg, pl).max_relative_error < 1e-6);
}

TEST_CASE("grad_check on sum of squares") {
  Rng rng(6);
  auto theta = random_param("theta", 3, 3, rng);
  auto loss = [&] {
    double s = 0.0;
    for (double v : theta.value.values()) s += v * v;
    return s;
  };
  auto analytic = [&] {
    for (std::size_t i = 0; i < theta.value.size(); ++i) theta.grad.values()[i] = 2.0 * theta.value.values()[i];
  };
  std::vector<Parameter<double>*> ps{&theta};
  const auto res = grad_check(loss, analytic, ps);
  CHECK(res.max_relative_error < 1e-9);
  CHECK(res.checked == 9);

  // A wrong gradient is caught and located.
  auto wrong = [&] {
    analytic();
    theta.grad(1, 2) += 0.5;
  };
  const auto bad = grad_check(loss, wrong, ps);
  CHECK(bad.max_relative_error > 1e-2);
  CHECK(bad.worst_parameter == "theta");
  CHECK(bad.worst_index == 5);
}

TEST_CASE("matrix products leave inputs untouched and are batch independent") {
  Rng rng(7);
  const auto a = random_matrix(5, 4, rng), b = random_matrix(4, 3, rng);
  const auto a_copy = a, b_copy = b;
  Matrix<double> out;
  matmul(a, b, out);
  CHECK(a == a_copy);
  CHECK(b == b_copy);
  for (std::size_t r = 0; r < 5; ++r) {
    Matrix<double> one(1, 4), single;
    std::copy(a.row(r).begin(), a.row(r).end(), one.row(0).begin());
    matmul(one, b, single);
    for (std::size_t j = 0; j < 3; ++j) CHECK(single(0, j) == out(r, j));
  }
  Matrix<double> tn(4, 3);
  matmul_tn_accumulate(a, random_matrix(5, 3, rng), tn);
  Matrix<double> nt;
  matmul_nt(a, random_matrix(2, 4, rng), nt);
  CHECK(nt.rows() == 5);
  CHECK(nt.cols() == 2);
  CHECK(transpose(transpose(a)) == a);
  Matrix<double> wrong;
  CHECK_THROWS_AS(matmul(a, a, wrong), Error);
}

TEST_CASE("matrix construction and finiteness") {
  CHECK_THROWS_AS((Matrix<double>{{1, 2}, {3}}), Error);
  Matrix<float> m(2, 2);
  CHECK(m.all_finite());
  m(1, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(m.all_finite());
  m(1, 1) = std::numeric_limits<float>::infinity();
  CHECK_FALSE(m.all_finite());
  CHECK(Matrix<double>(3, 4).shape_string() == "3x4");
}
