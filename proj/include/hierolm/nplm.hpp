#pragma once

#include <memory>

#include "hierolm/model.hpp"

namespace hierolm {

/// Feed-forward n-gram model over the previous `context_order` tokens
/// (BOS-padded on the left): h = tanh([e_{t-n+1}; ...; e_t] W_1 + b_1).
template <typename T>
class NplmModel final : public LanguageModel<T> {
 public:
  explicit NplmModel(const ModelDims& dims);

  std::unique_ptr<LanguageModel<T>> clone() const override { return std::make_unique<NplmModel>(*this); }

  std::unique_ptr<ForwardCache<T>> forward(const Batch& batch, const ForwardOptions& options,
                                           Matrix<T>& logits) const override;
  void backward(const ForwardCache<T>& cache, const Matrix<T>& dlogits) override;

  DecoderState<T> initial_state() const override;
  void advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const override;

  /// Context tokens (oldest first) used to predict position `step + 1`.
  static std::vector<TokenId> context_window(const Batch& batch, std::size_t step, std::size_t row,
                                             std::size_t order);

 private:
  struct Cache;
};

}  // namespace hierolm
