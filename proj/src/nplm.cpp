#include "hierolm/nplm.hpp"

#include <algorithm>

#include "hierolm/ops.hpp"

namespace hierolm {
namespace {

constexpr std::size_t kHiddenWeight = 1;
constexpr std::size_t kHiddenBias = 2;
constexpr std::size_t kHeadWeight = 3;
constexpr std::size_t kHeadBias = 4;

}  // namespace

template <typename T>
struct NplmModel<T>::Cache : ForwardCache<T> {
  std::vector<TokenId> context;  // (S * B) x order, row-major
  Matrix<T> x;                   // concatenated context embeddings, after dropout
  Matrix<T> x_mask;
  Matrix<T> hidden;  // tanh output before dropout
  Matrix<T> head_input;
  Matrix<T> head_mask;
};

template <typename T>
NplmModel<T>::NplmModel(const ModelDims& dims) : LanguageModel<T>(Architecture::kNplm, dims) {
  const std::size_t s = dims.embed_size, d = dims.hidden_size, v = dims.vocab_size;
  this->add_parameter("E", v, s);
  this->add_parameter("W_1", dims.context_order * s, d);
  this->add_parameter("b_1", 1, d);
  this->add_parameter("W_y", d, v);
  this->add_parameter("b_y", 1, v);
}

template <typename T>
std::vector<TokenId> NplmModel<T>::context_window(const Batch& batch, std::size_t step, std::size_t row,
                                                  std::size_t order) {
  std::vector<TokenId> ctx(order, kBosId);
  for (std::size_t j = 0; j < order; ++j) {
    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(step) - static_cast<std::ptrdiff_t>(order - 1 - j);
    if (pos >= 0) ctx[j] = batch.at(row, static_cast<std::size_t>(pos));
  }
  return ctx;
}

template <typename T>
std::unique_ptr<ForwardCache<T>> NplmModel<T>::forward(const Batch& batch, const ForwardOptions& options,
                                                       Matrix<T>& logits) const {
  if (batch.length < 2) throw Error(ErrorCode::kSequenceTooShort, "batch needs at least BOS and one target");
  this->check_tokens(batch.ids);
  const bool drop = options.training && options.dropout > 0.0;
  if (drop && !options.rng) throw Error(ErrorCode::kInvalidArgument, "dropout requires an rng");
  const std::size_t B = batch.size, S = batch.steps(), n = this->dims_.context_order;
  const std::size_t s = this->dims_.embed_size;

  auto cache = std::make_unique<Cache>();
  cache->batch_size = B;
  cache->steps = S;
  cache->context.reserve(S * B * n);
  for (std::size_t t = 0; t < S; ++t)
    for (std::size_t r = 0; r < B; ++r) {
      const auto ctx = context_window(batch, t, r, n);
      cache->context.insert(cache->context.end(), ctx.begin(), ctx.end());
    }
  const Matrix<T> emb = this->embed(cache->context);  // (S*B*n) x s
  cache->x.resize(S * B, n * s);
  std::copy(emb.data(), emb.data() + emb.size(), cache->x.data());
  if (drop) {
    cache->x_mask = dropout_mask<T>(S * B, n * s, options.dropout, *options.rng);
    apply_mask(cache->x, cache->x_mask);
  }
  cache->hidden = tanh_forward(
      affine_forward(cache->x, this->params_[kHiddenWeight].value, this->params_[kHiddenBias].value));
  cache->head_input = cache->hidden;
  if (drop) {
    cache->head_mask = dropout_mask<T>(S * B, this->dims_.hidden_size, options.dropout, *options.rng);
    apply_mask(cache->head_input, cache->head_mask);
  }
  logits = affine_forward(cache->head_input, this->params_[kHeadWeight].value, this->params_[kHeadBias].value);
  return cache;
}

template <typename T>
void NplmModel<T>::backward(const ForwardCache<T>& base, const Matrix<T>& dlogits) {
  const auto* cache = dynamic_cast<const Cache*>(&base);
  if (!cache) throw Error(ErrorCode::kCacheMismatch, "cache was not produced by an NPLM forward pass");
  const std::size_t rows = cache->batch_size * cache->steps;
  if (dlogits.rows() != rows || dlogits.cols() != this->dims_.vocab_size || cache->hidden.rows() != rows)
    throw Error(ErrorCode::kCacheMismatch, "dlogits " + dlogits.shape_string() + " does not match cache");

  Parameter<T>& head_w = this->params_[kHeadWeight];
  matmul_tn_accumulate(cache->head_input, dlogits, head_w.grad);
  accumulate_column_sums(dlogits, this->params_[kHeadBias].grad);
  Matrix<T> dhead;
  matmul_nt(dlogits, head_w.value, dhead);
  if (!cache->head_mask.empty()) apply_mask(dhead, cache->head_mask);

  const Matrix<T> da = tanh_backward(cache->hidden, dhead);
  matmul_tn_accumulate(cache->x, da, this->params_[kHiddenWeight].grad);
  accumulate_column_sums(da, this->params_[kHiddenBias].grad);
  Matrix<T> dx;
  matmul_nt(da, this->params_[kHiddenWeight].value, dx);
  if (!cache->x_mask.empty()) apply_mask(dx, cache->x_mask);

  // dx rows are n consecutive embedding slots; view it as (rows * n) x s.
  Matrix<T> de(rows * this->dims_.context_order, this->dims_.embed_size);
  std::copy(dx.data(), dx.data() + dx.size(), de.data());
  this->accumulate_embedding_grad(cache->context, de);
}

template <typename T>
DecoderState<T> NplmModel<T>::initial_state() const {
  return DecoderState<T>{};
}

template <typename T>
void NplmModel<T>::advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const {
  const TokenId ids[1] = {token};
  this->check_tokens(ids);
  const std::size_t n = this->dims_.context_order;
  state.history.push_back(token);
  if (state.history.size() > n) state.history.erase(state.history.begin());
  std::vector<TokenId> ctx(n - state.history.size(), kBosId);
  ctx.insert(ctx.end(), state.history.begin(), state.history.end());
  const Matrix<T> emb = this->embed(ctx);
  Matrix<T> x(1, n * this->dims_.embed_size);
  std::copy(emb.data(), emb.data() + emb.size(), x.data());
  const Matrix<T> h =
      tanh_forward(affine_forward(x, this->params_[kHiddenWeight].value, this->params_[kHiddenBias].value));
  logits = affine_forward(h, this->params_[kHeadWeight].value, this->params_[kHeadBias].value);
}

template class NplmModel<float>;
template class NplmModel<double>;

}  // namespace hierolm
