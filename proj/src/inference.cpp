#include "hierolm/inference.hpp"

#include <algorithm>
#include <numeric>

#include "hierolm/ops.hpp"

namespace hierolm {
namespace {

void check_context(std::span<const TokenId> context) {
  if (context.empty() || context.front() != kBosId)
    throw Error(ErrorCode::kInvalidArgument, "context must start with BOS");
  if (std::find(context.begin(), context.end(), kEosId) != context.end())
    throw Error(ErrorCode::kInvalidArgument, "context must not contain EOS");
}

}  // namespace

template <typename T>
TokenId argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < values.size(); ++j)
    if (values[j] > values[best]) best = j;
  return static_cast<TokenId>(best);
}

template <typename T>
DecoderState<T> run_context(const LanguageModel<T>& model, std::span<const TokenId> context, Matrix<T>& logits) {
  check_context(context);
  DecoderState<T> state = model.initial_state();
  for (TokenId id : context) model.advance(state, id, logits);
  return state;
}

template <typename T>
std::vector<double> next_token_distribution(const LanguageModel<T>& model, std::span<const TokenId> context) {
  Matrix<T> logits;
  run_context(model, context, logits);
  std::vector<double> probs(logits.cols());
  softmax_row(logits.row(0), std::span<double>(probs));
  return probs;
}

template <typename T>
std::vector<Candidate> predict_topk(const LanguageModel<T>& model, std::span<const TokenId> context, std::size_t k) {
  const std::size_t vocab = model.dims().vocab_size;
  if (k < 1 || k > vocab)
    throw Error(ErrorCode::kKOutOfRange, "k = " + std::to_string(k) + " outside [1, " + std::to_string(vocab) + "]");
  Matrix<T> logits;
  run_context(model, context, logits);
  const auto row = logits.row(0);
  std::vector<double> probs(vocab);
  softmax_row(row, std::span<double>(probs));
  // Rank on the raw logits so the order matches argmax exactly.
  std::vector<TokenId> order(vocab);
  std::iota(order.begin(), order.end(), TokenId{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TokenId a, TokenId b) { return row[a] != row[b] ? row[a] > row[b] : a < b; });
  std::vector<Candidate> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({order[i], probs[order[i]]});
  return out;
}

template <typename T>
std::vector<TokenId> greedy_complete(const LanguageModel<T>& model, std::span<const TokenId> context,
                                     std::size_t steps) {
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
  Matrix<T> logits;
  DecoderState<T> state = run_context(model, context, logits);
  std::vector<TokenId> out;
  while (out.size() < steps) {
    const TokenId next = argmax(logits.row(0));
    out.push_back(next);
    if (next == kEosId || out.size() == steps) break;
    model.advance(state, next, logits);
  }
  return out;
}

template <typename T>
std::vector<double> score_sentence(const LanguageModel<T>& model, std::span<const TokenId> encoded) {
  if (encoded.size() < 2) throw Error(ErrorCode::kSequenceTooShort, "encoded sentence needs BOS and a target");
  if (encoded.front() != kBosId) throw Error(ErrorCode::kInvalidArgument, "sentence must start with BOS");
  DecoderState<T> state = model.initial_state();
  Matrix<T> logits;
  std::vector<double> out;
  out.reserve(encoded.size() - 1);
  for (std::size_t t = 0; t + 1 < encoded.size(); ++t) {
    model.advance(state, encoded[t], logits);
    const auto row = logits.row(0);
    out.push_back(static_cast<double>(row[static_cast<std::size_t>(encoded[t + 1])]) - log_sum_exp(row));
  }
  return out;
}

#define HIEROLM_INSTANTIATE_INFERENCE(T)                                                                         \
  template TokenId argmax<T>(std::span<const T>);                                                               \
  template DecoderState<T> run_context<T>(const LanguageModel<T>&, std::span<const TokenId>, Matrix<T>&);      \
  template std::vector<double> next_token_distribution<T>(const LanguageModel<T>&, std::span<const TokenId>);   \
  template std::vector<Candidate> predict_topk<T>(const LanguageModel<T>&, std::span<const TokenId>, std::size_t); \
  template std::vector<TokenId> greedy_complete<T>(const LanguageModel<T>&, std::span<const TokenId>,           \
                                                   std::size_t);                                                \
  template std::vector<double> score_sentence<T>(const LanguageModel<T>&, std::span<const TokenId>);

HIEROLM_INSTANTIATE_INFERENCE(float)
HIEROLM_INSTANTIATE_INFERENCE(double)

}  // namespace hierolm
