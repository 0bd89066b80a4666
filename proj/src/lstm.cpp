#include "hierolm/lstm.hpp"

#include <algorithm>

#include "hierolm/ops.hpp"

namespace hierolm {
namespace {

// Parameter order: E, then (W, b) per gate in LstmGate order, then the head.
constexpr std::size_t kEmbedding = 0;
constexpr std::size_t kGateBase = 1;
constexpr std::size_t kHeadWeight = 9;
constexpr std::size_t kHeadBias = 10;

constexpr std::array<const char*, 4> kGateNames = {"f", "i", "g", "o"};

template <typename T>
Matrix<T> concat_columns(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

}  // namespace

template <typename T>
LstmStepCache<T> lstm_cell_forward(const Matrix<T>& e, const Matrix<T>& h_prev, const Matrix<T>& c_prev,
                                   const LstmCellWeights<T>& weights) {
  const std::size_t d = weights.w[0]->cols();
  if (e.rows() != h_prev.rows() || !h_prev.same_shape(c_prev) || h_prev.cols() != d ||
      weights.w[0]->rows() != e.cols() + d)
    throw Error(ErrorCode::kShapeMismatch, "lstm_cell: e " + e.shape_string() + ", h " + h_prev.shape_string() +
                                               ", c " + c_prev.shape_string() + ", W " +
                                               weights.w[0]->shape_string());
  LstmStepCache<T> s;
  s.z = concat_columns(e, h_prev);
  s.f = sigmoid_forward(affine_forward(s.z, *weights.w[kForget], *weights.b[kForget]));
  s.i = sigmoid_forward(affine_forward(s.z, *weights.w[kInput], *weights.b[kInput]));
  s.g = tanh_forward(affine_forward(s.z, *weights.w[kCandidate], *weights.b[kCandidate]));
  s.o = sigmoid_forward(affine_forward(s.z, *weights.w[kOutput], *weights.b[kOutput]));
  s.c_prev = c_prev;
  s.c.resize(e.rows(), d);
  for (std::size_t k = 0; k < s.c.size(); ++k)
    s.c.data()[k] = s.f.data()[k] * c_prev.data()[k] + s.i.data()[k] * s.g.data()[k];
  s.tanh_c = tanh_forward(s.c);
  s.h = hadamard(s.o, s.tanh_c);
  return s;
}

template <typename T>
void lstm_cell_backward(const LstmStepCache<T>& s, const Matrix<T>& dh, const Matrix<T>& dc,
                        const std::array<Matrix<T>, 4>& w_transposed, LstmCellGrads<T>& grads, Matrix<T>& de,
                        Matrix<T>& dh_prev, Matrix<T>& dc_prev) {
  if (!dh.same_shape(s.h) || !dc.same_shape(s.c))
    throw Error(ErrorCode::kShapeMismatch, "lstm_cell_backward: gradient shapes");
  const std::size_t rows = s.h.rows();
  const std::size_t d = s.h.cols();
  Matrix<T> do_(rows, d), dc_total(rows, d), df(rows, d), di(rows, d), dg(rows, d);
  dc_prev.resize(rows, d);
  for (std::size_t k = 0; k < s.h.size(); ++k) {
    const T tc = s.tanh_c.data()[k];
    do_.data()[k] = dh.data()[k] * tc;
    const T dct = dc.data()[k] + dh.data()[k] * s.o.data()[k] * (T{1} - tc * tc);
    dc_total.data()[k] = dct;
    df.data()[k] = dct * s.c_prev.data()[k];
    di.data()[k] = dct * s.g.data()[k];
    dg.data()[k] = dct * s.i.data()[k];
    dc_prev.data()[k] = dct * s.f.data()[k];
  }
  const std::array<Matrix<T>, 4> da = {sigmoid_backward(s.f, df), sigmoid_backward(s.i, di),
                                       tanh_backward(s.g, dg), sigmoid_backward(s.o, do_)};
  Matrix<T> dz(rows, s.z.cols());
  for (std::size_t gate = 0; gate < 4; ++gate) {
    matmul_tn_accumulate(s.z, da[gate], *grads.w[gate]);
    accumulate_column_sums(da[gate], *grads.b[gate]);
    matmul(da[gate], w_transposed[gate], dz, /*accumulate=*/true);
  }
  const std::size_t embed_cols = s.z.cols() - d;
  de.resize(rows, embed_cols);
  dh_prev.resize(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    auto src = dz.row(r);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(embed_cols), de.row(r).begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(embed_cols), src.end(), dh_prev.row(r).begin());
  }
}

template <typename T>
struct LstmModel<T>::Cache : ForwardCache<T> {
  std::vector<std::vector<TokenId>> inputs;  // per step
  std::vector<LstmStepCache<T>> cells;
  std::vector<Matrix<T>> embed_masks;  // per step; empty without dropout
  Matrix<T> head_input;                // (steps * B) x d, after dropout
  Matrix<T> head_mask;
};

template <typename T>
LstmModel<T>::LstmModel(const ModelDims& dims) : LanguageModel<T>(Architecture::kLstm, dims) {
  const std::size_t s = dims.embed_size, d = dims.hidden_size, v = dims.vocab_size;
  this->add_parameter("E", v, s);
  for (const char* gate : kGateNames) {
    this->add_parameter(std::string("W_") + gate, s + d, d);
    this->add_parameter(std::string("b_") + gate, 1, d);
  }
  this->add_parameter("W_y", d, v);
  this->add_parameter("b_y", 1, v);
}

template <typename T>
void LstmModel<T>::initialize(const InitOptions& options) {
  LanguageModel<T>::initialize(options);
  this->params_[kGateBase + 2 * kForget + 1].value.fill(T{1});
}

template <typename T>
LstmCellWeights<T> LstmModel<T>::cell_weights() const {
  LstmCellWeights<T> w;
  for (std::size_t g = 0; g < 4; ++g) {
    w.w[g] = &this->params_[kGateBase + 2 * g].value;
    w.b[g] = &this->params_[kGateBase + 2 * g + 1].value;
  }
  return w;
}

template <typename T>
LstmCellGrads<T> LstmModel<T>::cell_grads() {
  LstmCellGrads<T> g;
  for (std::size_t k = 0; k < 4; ++k) {
    g.w[k] = &this->params_[kGateBase + 2 * k].grad;
    g.b[k] = &this->params_[kGateBase + 2 * k + 1].grad;
  }
  return g;
}

template <typename T>
LstmStepCache<T> LstmModel<T>::cell(std::span<const TokenId> tokens, const LstmState<T>& state) const {
  this->check_tokens(tokens);
  return lstm_cell_forward(this->embed(tokens), state.h, state.c, cell_weights());
}

template <typename T>
std::unique_ptr<ForwardCache<T>> LstmModel<T>::forward(const Batch& batch, const ForwardOptions& options,
                                                       Matrix<T>& logits) const {
  if (batch.length < 2) throw Error(ErrorCode::kSequenceTooShort, "batch needs at least BOS and one target");
  this->check_tokens(batch.ids);
  const bool drop = options.training && options.dropout > 0.0;
  if (drop && !options.rng) throw Error(ErrorCode::kInvalidArgument, "dropout requires an rng");
  const std::size_t B = batch.size, S = batch.steps(), d = this->dims_.hidden_size;
  const LstmCellWeights<T> w = cell_weights();

  auto cache = std::make_unique<Cache>();
  cache->batch_size = B;
  cache->steps = S;
  cache->head_input.resize(S * B, d);
  Matrix<T> h(B, d), c(B, d);
  for (std::size_t t = 0; t < S; ++t) {
    std::vector<TokenId> ids(B);
    for (std::size_t r = 0; r < B; ++r) ids[r] = batch.input(t, r);
    Matrix<T> e = this->embed(ids);
    if (drop) {
      cache->embed_masks.push_back(dropout_mask<T>(B, e.cols(), options.dropout, *options.rng));
      apply_mask(e, cache->embed_masks.back());
    }
    LstmStepCache<T> step = lstm_cell_forward(e, h, c, w);
    h = step.h;
    c = step.c;
    std::copy(step.h.data(), step.h.data() + step.h.size(), cache->head_input.data() + t * B * d);
    cache->inputs.push_back(std::move(ids));
    cache->cells.push_back(std::move(step));
  }
  if (drop) {
    cache->head_mask = dropout_mask<T>(S * B, d, options.dropout, *options.rng);
    apply_mask(cache->head_input, cache->head_mask);
  }
  logits = affine_forward(cache->head_input, this->params_[kHeadWeight].value, this->params_[kHeadBias].value);
  return cache;
}

template <typename T>
void LstmModel<T>::backward(const ForwardCache<T>& base, const Matrix<T>& dlogits) {
  const auto* cache = dynamic_cast<const Cache*>(&base);
  if (!cache) throw Error(ErrorCode::kCacheMismatch, "cache was not produced by an LSTM forward pass");
  const std::size_t B = cache->batch_size, S = cache->steps, d = this->dims_.hidden_size;
  if (dlogits.rows() != S * B || dlogits.cols() != this->dims_.vocab_size || cache->cells.size() != S)
    throw Error(ErrorCode::kCacheMismatch, "dlogits " + dlogits.shape_string() + " does not match cache of " +
                                               std::to_string(S) + " steps x " + std::to_string(B) + " rows");

  Parameter<T>& head_w = this->params_[kHeadWeight];
  matmul_tn_accumulate(cache->head_input, dlogits, head_w.grad);
  accumulate_column_sums(dlogits, this->params_[kHeadBias].grad);
  Matrix<T> dhead;
  matmul_nt(dlogits, head_w.value, dhead);
  if (!cache->head_mask.empty()) apply_mask(dhead, cache->head_mask);

  std::array<Matrix<T>, 4> wt;
  for (std::size_t g = 0; g < 4; ++g) wt[g] = transpose(this->params_[kGateBase + 2 * g].value);
  LstmCellGrads<T> grads = cell_grads();

  Matrix<T> dh(B, d), dc(B, d), de, dh_prev, dc_prev;
  for (std::size_t t = S; t-- > 0;) {
    const T* src = dhead.data() + t * B * d;
    for (std::size_t k = 0; k < B * d; ++k) dh.data()[k] += src[k];
    lstm_cell_backward(cache->cells[t], dh, dc, wt, grads, de, dh_prev, dc_prev);
    if (!cache->embed_masks.empty()) apply_mask(de, cache->embed_masks[t]);
    this->accumulate_embedding_grad(cache->inputs[t], de);
    std::swap(dh, dh_prev);
    std::swap(dc, dc_prev);
  }
}

template <typename T>
DecoderState<T> LstmModel<T>::initial_state() const {
  DecoderState<T> s;
  s.h.resize(1, this->dims_.hidden_size);
  s.c.resize(1, this->dims_.hidden_size);
  return s;
}

template <typename T>
void LstmModel<T>::advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const {
  const TokenId ids[1] = {token};
  this->check_tokens(ids);
  LstmStepCache<T> step = lstm_cell_forward(this->embed(ids), state.h, state.c, cell_weights());
  state.h = std::move(step.h);
  state.c = std::move(step.c);
  logits = affine_forward(state.h, this->params_[kHeadWeight].value, this->params_[kHeadBias].value);
}

template class LstmModel<float>;
template class LstmModel<double>;
template LstmStepCache<float> lstm_cell_forward<float>(const Matrix<float>&, const Matrix<float>&,
                                                       const Matrix<float>&, const LstmCellWeights<float>&);
template LstmStepCache<double> lstm_cell_forward<double>(const Matrix<double>&, const Matrix<double>&,
                                                         const Matrix<double>&, const LstmCellWeights<double>&);
template void lstm_cell_backward<float>(const LstmStepCache<float>&, const Matrix<float>&, const Matrix<float>&,
                                        const std::array<Matrix<float>, 4>&, LstmCellGrads<float>&, Matrix<float>&,
                                        Matrix<float>&, Matrix<float>&);
template void lstm_cell_backward<double>(const LstmStepCache<double>&, const Matrix<double>&, const Matrix<double>&,
                                         const std::array<Matrix<double>, 4>&, LstmCellGrads<double>&,
                                         Matrix<double>&, Matrix<double>&, Matrix<double>&);

}  // namespace hierolm
