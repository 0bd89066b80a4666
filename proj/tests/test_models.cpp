#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hierolm/error.hpp"
#include "hierolm/inference.hpp"
#include "hierolm/lstm.hpp"
#include "hierolm/nplm.hpp"
#include "hierolm/ops.hpp"
#include "hierolm/rnn.hpp"
#include "support.hpp"

using namespace hierolm;

namespace {

const Architecture kAll[] = {Architecture::kLstm, Architecture::kRnn, Architecture::kNplm};

double sequence_loss(const LanguageModel<double>& m, const Batch& b, const ForwardOptions& opt = {}) {
  Matrix<double> logits;
  m.forward(b, opt, logits);
  const auto t = b.targets();
  const auto mask = b.mask();
  return softmax_xent(logits, std::span<const std::int32_t>(t), std::span<const std::uint8_t>(mask),
                      Reduction::kSum, false)
      .loss;
}

void sequence_grad(LanguageModel<double>& m, const Batch& b, const ForwardOptions& opt = {}) {
  m.zero_grad();
  Matrix<double> logits;
  auto cache = m.forward(b, opt, logits);
  const auto t = b.targets();
  const auto mask = b.mask();
  const auto x = softmax_xent(logits, std::span<const std::int32_t>(t), std::span<const std::uint8_t>(mask),
                              Reduction::kSum);
  m.backward(*cache, x.dlogits);
}

GradCheckResult check_model(LanguageModel<double>& m, const Batch& b) {
  auto ptrs = m.parameter_ptrs();
  return grad_check([&] { return sequence_loss(m, b); }, [&] { sequence_grad(m, b); }, ptrs);
}

std::unique_ptr<LanguageModel<double>> toy(Architecture arch, std::size_t v, std::size_t s, std::size_t d,
                                           std::uint64_t seed) {
  auto m = make_model<double>(arch, ModelDims{v, s, d, 2}, InitOptions{seed});
  testing::randomize(*m, seed + 100);
  return m;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("lstm cell with zero weights") {
  const std::size_t s = 3, d = 4;
  std::array<Matrix<double>, 4> w, b;
  LstmCellWeights<double> weights;
  for (std::size_t g = 0; g < 4; ++g) {
    w[g] = Matrix<double>(s + d, d);
    b[g] = Matrix<double>(1, d);
    weights.w[g] = &w[g];
    weights.b[g] = &b[g];
  }
  const Matrix<double> e{{0.3, -0.2, 0.9}}, h0(1, d);
  const Matrix<double> c0{{0.4, -1.0, 2.0, 0.0}};
  const auto step = lstm_cell_forward(e, h0, c0, weights);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(step.f(0, j) == 0.5);
    CHECK(step.i(0, j) == 0.5);
    CHECK(step.o(0, j) == 0.5);
    CHECK(step.g(0, j) == 0.0);
    CHECK(step.c(0, j) == doctest::Approx(0.5 * c0(0, j)).epsilon(1e-15));
    CHECK(step.h(0, j) == doctest::Approx(0.5 * std::tanh(0.5 * c0(0, j))).epsilon(1e-15));
  }
  const auto zero = lstm_cell_forward(e, h0, Matrix<double>(1, d), weights);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(zero.h(0, j) == 0.0);
    CHECK(zero.c(0, j) == 0.0);
  }
}

TEST_CASE("lstm cell against a scalar oracle") {
  // s = 1, d = 1: z = [e, h_prev], each gate has weights (w_e, w_h) and bias.
  const double e = 0.7, hp = -0.3, cp = 0.25;
  const double we[4] = {0.5, -1.2, 0.8, 0.3}, wh[4] = {-0.4, 0.9, 1.1, -0.6}, bb[4] = {1.0, 0.1, -0.2, 0.05};
  std::array<Matrix<double>, 4> w, b;
  LstmCellWeights<double> weights;
  for (std::size_t g = 0; g < 4; ++g) {
    w[g] = Matrix<double>{{we[g]}, {wh[g]}};
    b[g] = Matrix<double>{{bb[g]}};
    weights.w[g] = &w[g];
    weights.b[g] = &b[g];
  }
  const auto step = lstm_cell_forward(Matrix<double>{{e}}, Matrix<double>{{hp}}, Matrix<double>{{cp}}, weights);
  auto pre = [&](int g) { return we[g] * e + wh[g] * hp + bb[g]; };
  const double f = sigmoid(pre(0)), i = sigmoid(pre(1)), g = std::tanh(pre(2)), o = sigmoid(pre(3));
  const double c = f * cp + i * g, h = o * std::tanh(c);
  CHECK(step.f(0, 0) == doctest::Approx(f).epsilon(1e-14));
  CHECK(step.i(0, 0) == doctest::Approx(i).epsilon(1e-14));
  CHECK(step.g(0, 0) == doctest::Approx(g).epsilon(1e-14));
  CHECK(step.o(0, 0) == doctest::Approx(o).epsilon(1e-14));
  CHECK(step.c(0, 0) == doctest::Approx(c).epsilon(1e-14));
  CHECK(step.h(0, 0) == doctest::Approx(h).epsilon(1e-14));
}

TEST_CASE("lstm gates stay in range and |h| < 1") {
  auto m = toy(Architecture::kLstm, 9, 5, 6, 3);
  testing::randomize(*m, 77, 3.0);
  auto& lstm = dynamic_cast<LstmModel<double>&>(*m);
  Rng rng(4);
  LstmState<double> state{Matrix<double>(3, 6), Matrix<double>(3, 6)};
  for (int t = 0; t < 30; ++t) {
    std::vector<TokenId> tokens(3);
    for (auto& tok : tokens) tok = static_cast<TokenId>(rng.below(9));
    const auto step = lstm.cell(tokens, state);
    for (std::size_t k = 0; k < step.h.size(); ++k) {
      CHECK(step.f.values()[k] > 0.0);
      CHECK(step.f.values()[k] < 1.0);
      CHECK(step.i.values()[k] > 0.0);
      CHECK(step.i.values()[k] < 1.0);
      CHECK(step.o.values()[k] > 0.0);
      CHECK(step.o.values()[k] < 1.0);
      CHECK(std::abs(step.g.values()[k]) <= 1.0);
      CHECK(std::abs(step.h.values()[k]) < 1.0);
    }
    state = {step.h, step.c};
  }
}

TEST_CASE("one lstm cell step passes grad_check") {
  auto m = toy(Architecture::kLstm, 5, 3, 4, 1);
  const Batch b = Batch::from_sentences(std::vector<EncodedSentence>{{kBosId, 4}});
  CHECK(b.steps() == 1);
  CHECK(check_model(*m, b).max_relative_error < 1e-4);
}

TEST_CASE("full BPTT passes grad_check for every architecture") {
  for (Architecture arch : kAll) {
    CAPTURE(architecture_name(arch));
    auto m = toy(arch, 5, 3, 4, 2);
    // Three steps.
    const Batch three = Batch::from_sentences(std::vector<EncodedSentence>{{kBosId, 4, 3, kEosId}});
    CHECK(check_model(*m, three).max_relative_error < 1e-4);

    auto m7 = toy(arch, 7, 3, 4, 3);
    Rng rng(9);
    std::vector<EncodedSentence> sents{testing::random_sentence(rng, 5, 7), testing::random_sentence(rng, 2, 7),
                                       testing::random_sentence(rng, 4, 7)};
    const Batch ragged = Batch::from_sentences(sents);
    const auto res = check_model(*m7, ragged);
    CHECK(res.max_relative_error < 1e-4);
    CHECK(res.checked == m7->parameter_count());
  }
}

TEST_CASE("gradients with a fixed dropout mask pass grad_check") {
  for (Architecture arch : kAll) {
    CAPTURE(architecture_name(arch));
    auto m = toy(arch, 7, 3, 4, 5);
    const Batch b = Batch::from_sentences(std::vector<EncodedSentence>{{kBosId, 4, 5, 6, kEosId}});
    auto loss = [&] {
      Rng rng(42);
      return sequence_loss(*m, b, ForwardOptions{true, 0.3, &rng});
    };
    auto grad = [&] {
      Rng rng(42);
      sequence_grad(*m, b, ForwardOptions{true, 0.3, &rng});
    };
    auto ptrs = m->parameter_ptrs();
    CHECK(grad_check(loss, grad, ptrs).max_relative_error < 1e-4);
  }
}

TEST_CASE("single-step BPTT equals the one-cell gradient") {
  auto m = toy(Architecture::kLstm, 6, 3, 4, 8);
  const Batch b = Batch::from_sentences(std::vector<EncodedSentence>{{kBosId, 5}});
  sequence_grad(*m, b);

  auto& lstm = dynamic_cast<LstmModel<double>&>(*m);
  const auto step = lstm.cell(std::vector<TokenId>{kBosId}, {Matrix<double>(1, 4), Matrix<double>(1, 4)});
  const auto logits = affine_forward(step.h, m->parameter("W_y").value, m->parameter("b_y").value);
  const std::vector<std::int32_t> t{5};
  const auto x = softmax_xent(logits, t, {}, Reduction::kSum);
  Matrix<double> dh;
  matmul_nt(x.dlogits, m->parameter("W_y").value, dh);
  std::array<Matrix<double>, 4> wt, gw, gb;
  LstmCellGrads<double> grads;
  const char* names[] = {"f", "i", "g", "o"};
  for (std::size_t g = 0; g < 4; ++g) {
    wt[g] = transpose(m->parameter(std::string("W_") + names[g]).value);
    gw[g] = Matrix<double>(7, 4);
    gb[g] = Matrix<double>(1, 4);
    grads.w[g] = &gw[g];
    grads.b[g] = &gb[g];
  }
  Matrix<double> de, dhp, dcp;
  lstm_cell_backward(step, dh, Matrix<double>(1, 4), wt, grads, de, dhp, dcp);
  for (std::size_t g = 0; g < 4; ++g) {
    const auto& model_w = m->parameter(std::string("W_") + names[g]).grad;
    const auto& model_b = m->parameter(std::string("b_") + names[g]).grad;
    for (std::size_t k = 0; k < gw[g].size(); ++k)
      CHECK(model_w.values()[k] == doctest::Approx(gw[g].values()[k]).epsilon(1e-12));
    for (std::size_t k = 0; k < gb[g].size(); ++k)
      CHECK(model_b.values()[k] == doctest::Approx(gb[g].values()[k]).epsilon(1e-12));
  }
  const auto& de_model = m->parameter("E").grad;
  for (std::size_t j = 0; j < 3; ++j) CHECK(de_model(kBosId, j) == doctest::Approx(de(0, j)).epsilon(1e-12));
  for (std::size_t j = 0; j < 3; ++j) CHECK(de_model(4, j) == 0.0);
}

TEST_CASE("a duplicated sentence doubles the summed gradient") {
  for (Architecture arch : kAll) {
    CAPTURE(architecture_name(arch));
    auto m = toy(arch, 7, 3, 4, 11);
    const EncodedSentence s{kBosId, 4, 6, 5, kEosId};
    sequence_grad(*m, Batch::from_sentences(std::vector<EncodedSentence>{s}));
    std::vector<Matrix<double>> single;
    for (const auto& p : m->parameters()) single.push_back(p.grad);
    sequence_grad(*m, Batch::from_sentences(std::vector<EncodedSentence>{s, s}));
    for (std::size_t i = 0; i < single.size(); ++i)
      for (std::size_t k = 0; k < single[i].size(); ++k)
        CHECK(m->parameters()[i].grad.values()[k] == doctest::Approx(2.0 * single[i].values()[k]).epsilon(1e-12));
  }
}

TEST_CASE("rnn with zero weights keeps h at zero") {
  auto m = make_model<double>(Architecture::kRnn, ModelDims{6, 3, 4, 2}, InitOptions{1});
  for (const char* name : {"W_xh", "W_hh", "b_h"}) m->parameter(name).value.set_zero();
  auto state = m->initial_state();
  Matrix<double> logits;
  for (TokenId t : {kBosId, TokenId{4}, TokenId{5}, TokenId{3}}) {
    m->advance(state, t, logits);
    for (double v : state.h.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("nplm context window pads with BOS") {
  const Batch b = Batch::from_sentences(std::vector<EncodedSentence>{{kBosId, 4, 5, 6, kEosId}});
  CHECK(NplmModel<float>::context_window(b, 0, 0, 2) == std::vector<TokenId>{kBosId, kBosId});
  CHECK(NplmModel<float>::context_window(b, 1, 0, 2) == std::vector<TokenId>{kBosId, 4});
  CHECK(NplmModel<float>::context_window(b, 3, 0, 2) == std::vector<TokenId>{5, 6});
  CHECK(NplmModel<float>::context_window(b, 2, 0, 3) == std::vector<TokenId>{kBosId, 4, 5});
}

TEST_CASE("initialization") {
  const ModelDims dims{20, 6, 8, 2};
  for (Architecture arch : kAll) {
    auto a = make_model<float>(arch, dims, InitOptions{5});
    auto b = make_model<float>(arch, dims, InitOptions{5});
    auto c = make_model<float>(arch, dims, InitOptions{6});
    bool differs = false;
    for (std::size_t i = 0; i < a->parameters().size(); ++i) {
      CHECK(a->parameters()[i].value == b->parameters()[i].value);
      differs = differs || !(a->parameters()[i].value == c->parameters()[i].value);
    }
    CHECK(differs);
  }
  auto lstm = make_model<float>(Architecture::kLstm, dims, InitOptions{5});
  std::vector<std::string> names;
  for (const auto& p : lstm->parameters()) names.push_back(p.name);
  CHECK(names == std::vector<std::string>{"E", "W_f", "b_f", "W_i", "b_i", "W_g", "b_g", "W_o", "b_o", "W_y", "b_y"});
  for (float v : lstm->parameter("b_f").value.values()) CHECK(v == 1.0f);
  for (const char* bias : {"b_i", "b_g", "b_o", "b_y"})
    for (float v : lstm->parameter(bias).value.values()) CHECK(v == 0.0f);
  CHECK(lstm->parameter("W_f").value.rows() == 14);
  CHECK(lstm->parameter("W_y").value.rows() == 8);
  CHECK(lstm->parameter("W_y").value.cols() == 20);
}

TEST_CASE("output head stddev matches the Xavier-uniform prediction") {
  const std::size_t d = 1024, v = 7058;
  auto m = make_model<float>(Architecture::kLstm, ModelDims{v, 8, d, 2}, InitOptions{3});
  const auto& w = m->parameter("W_y").value;
  const double limit = std::sqrt(6.0 / static_cast<double>(d + v));
  const double predicted = limit / std::sqrt(3.0);
  double sum = 0.0, sq = 0.0, max_abs = 0.0;
  for (float x : w.values()) {
    sum += x;
    sq += static_cast<double>(x) * x;
    max_abs = std::max(max_abs, std::abs(static_cast<double>(x)));
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(std::abs(sd - predicted) / predicted < 0.10);
  CHECK(max_abs <= limit);
}

TEST_CASE("forward is deterministic and batch independent; advance agrees") {
  for (Architecture arch : kAll) {
    CAPTURE(architecture_name(arch));
    auto m = make_model<float>(arch, ModelDims{12, 5, 6, 2}, InitOptions{9});
    testing::randomize(*m, 19);
    Rng rng(3);
    std::vector<EncodedSentence> sents{testing::random_sentence(rng, 4, 12), testing::random_sentence(rng, 7, 12),
                                       testing::random_sentence(rng, 1, 12)};
    const Batch all = Batch::from_sentences(sents);
    Matrix<float> l1, l2;
    m->forward(all, {}, l1);
    m->forward(all, {}, l2);
    CHECK(l1 == l2);
    for (std::size_t r = 0; r < sents.size(); ++r) {
      Matrix<float> single;
      const Batch one = Batch::from_sentences(std::vector<EncodedSentence>{sents[r]});
      m->forward(one, {}, single);
      auto state = m->initial_state();
      Matrix<float> step_logits;
      for (std::size_t t = 0; t + 1 < sents[r].size(); ++t) {
        m->advance(state, sents[r][t], step_logits);
        for (std::size_t j = 0; j < 12; ++j) {
          CHECK(single(t, j) == l1(t * all.size + r, j));
          CHECK(step_logits(0, j) == single(t, j));
        }
      }
    }
  }
}

TEST_CASE("batch construction") {
  const Batch b = Batch::from_sentences(std::vector<EncodedSentence>{{1, 4, 2}, {1, 4, 5, 6, 2}});
  CHECK(b.length == 5);
  CHECK(b.steps() == 4);
  CHECK(b.at(0, 3) == kPadId);
  const auto mask = b.mask();
  CHECK(std::count(mask.begin(), mask.end(), 0) == 2);
  CHECK(b.active_positions() == 6);
  CHECK(b.targets()[0 * 2 + 1] == 4);
  CHECK(b.targets()[3 * 2 + 1] == kEosId);
  try {
    Batch::from_sentences(std::vector<EncodedSentence>{{1}});
    FAIL("expected SequenceTooShort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSequenceTooShort);
  }
}

TEST_CASE("backward rejects foreign or mismatched caches") {
  auto lstm = make_model<double>(Architecture::kLstm, ModelDims{6, 3, 4, 2}, InitOptions{1});
  auto rnn = make_model<double>(Architecture::kRnn, ModelDims{6, 3, 4, 2}, InitOptions{1});
  const Batch b = Batch::from_sentences(std::vector<EncodedSentence>{{1, 4, 2}});
  Matrix<double> logits;
  auto rnn_cache = rnn->forward(b, {}, logits);
  try {
    lstm->backward(*rnn_cache, logits);
    FAIL("expected CacheMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCacheMismatch);
  }
  auto cache = lstm->forward(b, {}, logits);
  try {
    lstm->backward(*cache, Matrix<double>(3, 6));
    FAIL("expected CacheMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCacheMismatch);
  }
}

TEST_CASE("predict_topk") {
  auto m = make_model<float>(Architecture::kLstm, ModelDims{10, 4, 5, 2}, InitOptions{1, true});
  const std::vector<TokenId> ctx{kBosId, 5, 6};
  const auto top3 = predict_topk(*m, ctx, 3);
  REQUIRE(top3.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(top3[i].id == static_cast<TokenId>(i));
    CHECK(top3[i].probability == doctest::Approx(0.1).epsilon(1e-9));
  }

  testing::randomize(*m, 4);
  const auto all = predict_topk(*m, ctx, 10);
  double sum = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    sum += all[i].probability;
    if (i > 0) CHECK(all[i].probability <= all[i - 1].probability);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(predict_topk(*m, ctx, 10) == all);

  for (std::size_t bad : {std::size_t{0}, std::size_t{11}}) {
    try {
      predict_topk(*m, ctx, bad);
      FAIL("expected KOutOfRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kKOutOfRange);
    }
  }

  // Uniform shift of b_y leaves the ranking alone.
  const auto before = predict_topk(*m, ctx, 1);
  for (auto& v : m->output_bias().values()) v += 3.5f;
  CHECK(predict_topk(*m, ctx, 1)[0].id == before[0].id);
}

TEST_CASE("greedy_complete") {
  auto m = make_model<float>(Architecture::kRnn, ModelDims{10, 4, 5, 2}, InitOptions{2});
  testing::randomize(*m, 6);
  const std::vector<TokenId> ctx{kBosId, 4};
  CHECK(greedy_complete(*m, ctx, 1) == std::vector<TokenId>{predict_topk(*m, ctx, 1)[0].id});
  const auto long_run = greedy_complete(*m, ctx, 8);
  CHECK(long_run.size() <= 8);
  for (std::size_t a = 1; a <= long_run.size(); ++a) {
    const auto std_prefix = greedy_complete(*m, ctx, a);
    CHECK(std::equal(std_prefix.begin(), std_prefix.end(), long_run.begin()));
  }
  CHECK_THROWS_AS(greedy_complete(*m, ctx, 0), Error);

  auto eos = make_model<float>(Architecture::kLstm, ModelDims{10, 4, 5, 2}, InitOptions{1, true});
  eos->output_bias()(0, kEosId) = 5.0f;
  CHECK(greedy_complete(*eos, ctx, 4) == std::vector<TokenId>{kEosId});
}

TEST_CASE("score_sentence and precision conversion") {
  auto m = make_model<float>(Architecture::kNplm, ModelDims{8, 3, 4, 2}, InitOptions{3});
  const EncodedSentence s{kBosId, 4, 5, kEosId};
  const auto lp = score_sentence(*m, s);
  REQUIRE(lp.size() == 3);
  const auto dist = next_token_distribution(*m, std::vector<TokenId>{kBosId, 4});
  CHECK(lp[1] == doctest::Approx(std::log(dist[5])).epsilon(1e-9));
  auto d = convert_model<double>(*m);
  for (std::size_t i = 0; i < m->parameters().size(); ++i)
    CHECK(d->parameters()[i].value == m->parameters()[i].value.cast<double>());
  CHECK_THROWS_AS(run_context(*m, std::vector<TokenId>{4, 5}, *std::make_unique<Matrix<float>>()), Error);
}
