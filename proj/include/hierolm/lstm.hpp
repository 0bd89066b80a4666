#pragma once

#include <array>
#include <memory>
#include <vector>

#include "hierolm/model.hpp"

namespace hierolm {

/// Gate order used throughout: forget, input, candidate (g), output.
enum LstmGate : std::size_t { kForget = 0, kInput = 1, kCandidate = 2, kOutput = 3 };

template <typename T>
struct LstmCellWeights {
  std::array<const Matrix<T>*, 4> w{};  // (s + d) x d each
  std::array<const Matrix<T>*, 4> b{};  // 1 x d each
};

template <typename T>
struct LstmCellGrads {
  std::array<Matrix<T>*, 4> w{};
  std::array<Matrix<T>*, 4> b{};
};

template <typename T>
struct LstmState {
  Matrix<T> h;  // B x d
  Matrix<T> c;  // B x d
};

/// Activations one cell step saves for backward.
template <typename T>
struct LstmStepCache {
  Matrix<T> z;  // [e, h_prev]
  Matrix<T> f, i, g, o;
  Matrix<T> c_prev;
  Matrix<T> c;
  Matrix<T> tanh_c;
  Matrix<T> h;
};

/// One step over a batch of rows:
///   z = [e, h_prev]
///   f = sigmoid(z W_f + b_f)   i = sigmoid(z W_i + b_i)
///   g = tanh(z W_g + b_g)      o = sigmoid(z W_o + b_o)
///   c = f * c_prev + i * g     h = o * tanh(c)
template <typename T>
LstmStepCache<T> lstm_cell_forward(const Matrix<T>& e, const Matrix<T>& h_prev, const Matrix<T>& c_prev,
                                   const LstmCellWeights<T>& weights);

/// Backward through one step. `dh` and `dc` are the gradients arriving at
/// this step's h and c; `w_transposed` holds W^T per gate. Parameter
/// gradients are accumulated, input gradients overwritten.
template <typename T>
void lstm_cell_backward(const LstmStepCache<T>& step, const Matrix<T>& dh, const Matrix<T>& dc,
                        const std::array<Matrix<T>, 4>& w_transposed, LstmCellGrads<T>& grads, Matrix<T>& de,
                        Matrix<T>& dh_prev, Matrix<T>& dc_prev);

template <typename T>
class LstmModel final : public LanguageModel<T> {
 public:
  explicit LstmModel(const ModelDims& dims);

  std::unique_ptr<LanguageModel<T>> clone() const override { return std::make_unique<LstmModel>(*this); }

  void initialize(const InitOptions& options) override;

  std::unique_ptr<ForwardCache<T>> forward(const Batch& batch, const ForwardOptions& options,
                                           Matrix<T>& logits) const override;
  void backward(const ForwardCache<T>& cache, const Matrix<T>& dlogits) override;

  DecoderState<T> initial_state() const override;
  void advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const override;

  LstmCellWeights<T> cell_weights() const;
  LstmCellGrads<T> cell_grads();

  /// Embeds one batch of tokens and runs a single cell step.
  LstmStepCache<T> cell(std::span<const TokenId> tokens, const LstmState<T>& state) const;

 private:
  struct Cache;
};

}  // namespace hierolm
