#pragma once

#include <memory>

#include "hierolm/model.hpp"

namespace hierolm {

/// Elman RNN, the LSTM with its gating removed:
///   h_t = tanh(e_t W_xh + h_{t-1} W_hh + b_h)
template <typename T>
class RnnModel final : public LanguageModel<T> {
 public:
  explicit RnnModel(const ModelDims& dims);

  std::unique_ptr<LanguageModel<T>> clone() const override { return std::make_unique<RnnModel>(*this); }

  std::unique_ptr<ForwardCache<T>> forward(const Batch& batch, const ForwardOptions& options,
                                           Matrix<T>& logits) const override;
  void backward(const ForwardCache<T>& cache, const Matrix<T>& dlogits) override;

  DecoderState<T> initial_state() const override;
  void advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const override;

 private:
  struct Cache;
  Matrix<T> step(const Matrix<T>& e, const Matrix<T>& h_prev) const;
};

}  // namespace hierolm
