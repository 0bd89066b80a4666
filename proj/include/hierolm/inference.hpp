#pragma once

#include <span>
#include <vector>

#include "hierolm/model.hpp"

namespace hierolm {

struct Candidate {
  TokenId id = 0;
  double probability = 0.0;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Index of the largest entry; ties go to the smallest index.
template <typename T>
TokenId argmax(std::span<const T> values);

template <typename T>
TokenId argmax(std::span<T> values) {
  return argmax(std::span<const T>(values));
}

/// Runs the model over a BOS-prefixed context (no EOS) and returns the
/// decoder state after the last token together with its next-token logits.
template <typename T>
DecoderState<T> run_context(const LanguageModel<T>& model, std::span<const TokenId> context, Matrix<T>& logits);

/// Softmax of the next-token logits after `context`.
template <typename T>
std::vector<double> next_token_distribution(const LanguageModel<T>& model, std::span<const TokenId> context);

/// Top-k next tokens by probability, ties broken by smaller id. Throws
/// KOutOfRange unless 1 <= k <= |V|.
template <typename T>
std::vector<Candidate> predict_topk(const LanguageModel<T>& model, std::span<const TokenId> context, std::size_t k);

/// Greedy decoding: appends the argmax token and re-predicts, stopping after
/// EOS (which is included) or `steps` tokens.
template <typename T>
std::vector<TokenId> greedy_complete(const LanguageModel<T>& model, std::span<const TokenId> context,
                                     std::size_t steps);

/// Natural-log probability of each token after BOS in an encoded sentence.
template <typename T>
std::vector<double> score_sentence(const LanguageModel<T>& model, std::span<const TokenId> encoded);

}  // namespace hierolm
