#include "hierolm/rnn.hpp"

#include <algorithm>

#include "hierolm/ops.hpp"

namespace hierolm {
namespace {

constexpr std::size_t kInputWeight = 1;
constexpr std::size_t kRecurrentWeight = 2;
constexpr std::size_t kHiddenBias = 3;
constexpr std::size_t kHeadWeight = 4;
constexpr std::size_t kHeadBias = 5;

}  // namespace

template <typename T>
struct RnnModel<T>::Cache : ForwardCache<T> {
  std::vector<std::vector<TokenId>> inputs;
  std::vector<Matrix<T>> embedded;  // after dropout
  std::vector<Matrix<T>> hidden;    // h_t, t = 0..S-1
  std::vector<Matrix<T>> embed_masks;
  Matrix<T> head_input;
  Matrix<T> head_mask;
};

template <typename T>
RnnModel<T>::RnnModel(const ModelDims& dims) : LanguageModel<T>(Architecture::kRnn, dims) {
  const std::size_t s = dims.embed_size, d = dims.hidden_size, v = dims.vocab_size;
  this->add_parameter("E", v, s);
  this->add_parameter("W_xh", s, d);
  this->add_parameter("W_hh", d, d);
  this->add_parameter("b_h", 1, d);
  this->add_parameter("W_y", d, v);
  this->add_parameter("b_y", 1, v);
}

template <typename T>
Matrix<T> RnnModel<T>::step(const Matrix<T>& e, const Matrix<T>& h_prev) const {
  Matrix<T> a;
  matmul(e, this->params_[kInputWeight].value, a);
  matmul(h_prev, this->params_[kRecurrentWeight].value, a, /*accumulate=*/true);
  add_row_broadcast(a, this->params_[kHiddenBias].value);
  return tanh_forward(a);
}

template <typename T>
std::unique_ptr<ForwardCache<T>> RnnModel<T>::forward(const Batch& batch, const ForwardOptions& options,
                                                      Matrix<T>& logits) const {
  if (batch.length < 2) throw Error(ErrorCode::kSequenceTooShort, "batch needs at least BOS and one target");
  this->check_tokens(batch.ids);
  const bool drop = options.training && options.dropout > 0.0;
  if (drop && !options.rng) throw Error(ErrorCode::kInvalidArgument, "dropout requires an rng");
  const std::size_t B = batch.size, S = batch.steps(), d = this->dims_.hidden_size;

  auto cache = std::make_unique<Cache>();
  cache->batch_size = B;
  cache->steps = S;
  cache->head_input.resize(S * B, d);
  Matrix<T> h(B, d);
  for (std::size_t t = 0; t < S; ++t) {
    std::vector<TokenId> ids(B);
    for (std::size_t r = 0; r < B; ++r) ids[r] = batch.input(t, r);
    Matrix<T> e = this->embed(ids);
    if (drop) {
      cache->embed_masks.push_back(dropout_mask<T>(B, e.cols(), options.dropout, *options.rng));
      apply_mask(e, cache->embed_masks.back());
    }
    h = step(e, h);
    std::copy(h.data(), h.data() + h.size(), cache->head_input.data() + t * B * d);
    cache->inputs.push_back(std::move(ids));
    cache->embedded.push_back(std::move(e));
    cache->hidden.push_back(h);
  }
  if (drop) {
    cache->head_mask = dropout_mask<T>(S * B, d, options.dropout, *options.rng);
    apply_mask(cache->head_input, cache->head_mask);
  }
  logits = affine_forward(cache->head_input, this->params_[kHeadWeight].value, this->params_[kHeadBias].value);
  return cache;
}

template <typename T>
void RnnModel<T>::backward(const ForwardCache<T>& base, const Matrix<T>& dlogits) {
  const auto* cache = dynamic_cast<const Cache*>(&base);
  if (!cache) throw Error(ErrorCode::kCacheMismatch, "cache was not produced by an RNN forward pass");
  const std::size_t B = cache->batch_size, S = cache->steps, d = this->dims_.hidden_size;
  if (dlogits.rows() != S * B || dlogits.cols() != this->dims_.vocab_size || cache->hidden.size() != S)
    throw Error(ErrorCode::kCacheMismatch, "dlogits " + dlogits.shape_string() + " does not match cache");

  Parameter<T>& head_w = this->params_[kHeadWeight];
  matmul_tn_accumulate(cache->head_input, dlogits, head_w.grad);
  accumulate_column_sums(dlogits, this->params_[kHeadBias].grad);
  Matrix<T> dhead;
  matmul_nt(dlogits, head_w.value, dhead);
  if (!cache->head_mask.empty()) apply_mask(dhead, cache->head_mask);

  const Matrix<T> wxh_t = transpose(this->params_[kInputWeight].value);
  const Matrix<T> whh_t = transpose(this->params_[kRecurrentWeight].value);
  const Matrix<T> zero_h(B, d);
  Matrix<T> dh(B, d), de, dh_prev;
  for (std::size_t t = S; t-- > 0;) {
    const T* src = dhead.data() + t * B * d;
    for (std::size_t k = 0; k < B * d; ++k) dh.data()[k] += src[k];
    const Matrix<T> da = tanh_backward(cache->hidden[t], dh);
    const Matrix<T>& h_prev = t > 0 ? cache->hidden[t - 1] : zero_h;
    matmul_tn_accumulate(cache->embedded[t], da, this->params_[kInputWeight].grad);
    matmul_tn_accumulate(h_prev, da, this->params_[kRecurrentWeight].grad);
    accumulate_column_sums(da, this->params_[kHiddenBias].grad);
    matmul(da, wxh_t, de);
    if (!cache->embed_masks.empty()) apply_mask(de, cache->embed_masks[t]);
    this->accumulate_embedding_grad(cache->inputs[t], de);
    matmul(da, whh_t, dh_prev);
    std::swap(dh, dh_prev);
  }
}

template <typename T>
DecoderState<T> RnnModel<T>::initial_state() const {
  DecoderState<T> s;
  s.h.resize(1, this->dims_.hidden_size);
  return s;
}

template <typename T>
void RnnModel<T>::advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const {
  const TokenId ids[1] = {token};
  this->check_tokens(ids);
  state.h = step(this->embed(ids), state.h);
  logits = affine_forward(state.h, this->params_[kHeadWeight].value, this->params_[kHeadBias].value);
}

template class RnnModel<float>;
template class RnnModel<double>;

}  // namespace hierolm
