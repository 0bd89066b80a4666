#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/matrix.hpp"
#include "hierolm/random.hpp"

namespace hierolm {

enum class Architecture { kLstm, kRnn, kNplm };

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t embed_size = 0;
  std::size_t hidden_size = 0;
  std::size_t context_order = 2;  // NPLM only; 2 = trigram

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Sentences padded with PAD to a common encoded length. Row-major by
/// sentence; position t of every row is predicted from positions 0..t-1.
struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;

  static Batch from_sentences(std::span<const EncodedSentence* const> sentences);
  static Batch from_sentences(std::span<const EncodedSentence> sentences);

  std::size_t steps() const noexcept { return length - 1; }
  TokenId at(std::size_t row, std::size_t pos) const { return ids[row * length + pos]; }
  TokenId input(std::size_t step, std::size_t row) const { return at(row, step); }
  TokenId target(std::size_t step, std::size_t row) const { return at(row, step + 1); }

  /// Targets and loss mask for the time-major logit rows (row = step * size + b).
  std::vector<std::int32_t> targets() const;
  std::vector<std::uint8_t> mask() const;
  std::size_t active_positions() const;
};

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;  // dropout masks; required when training with dropout > 0
};

template <typename T>
struct ForwardCache {
  virtual ~ForwardCache() = default;
  std::size_t batch_size = 0;
  std::size_t steps = 0;
};

/// Incremental decoding state for a single sequence.
template <typename T>
struct DecoderState {
  Matrix<T> h;                   // 1 x d
  Matrix<T> c;                   // 1 x d, LSTM only
  std::vector<TokenId> history;  // NPLM context window
};

struct InitOptions {
  std::uint64_t seed = 1;
  bool zero_output_head = false;
};

/// Common surface of the three architectures. Parameters live in a fixed,
/// architecture-specific order that is also the checkpoint order.
template <typename T>
class LanguageModel {
 public:
  LanguageModel(Architecture arch, ModelDims dims) : arch_(arch), dims_(dims) {}
  LanguageModel(const LanguageModel&) = default;
  LanguageModel& operator=(const LanguageModel&) = default;
  virtual ~LanguageModel() = default;

  virtual std::unique_ptr<LanguageModel> clone() const = 0;

  Architecture architecture() const noexcept { return arch_; }
  const ModelDims& dims() const noexcept { return dims_; }

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::vector<Parameter<T>*> parameter_ptrs();
  std::size_t parameter_count() const;

  void zero_grad();

  const Matrix<T>& embedding() const { return params_.front().value; }
  Matrix<T>& output_weight() { return parameter("W_y").value; }
  Matrix<T>& output_bias() { return parameter("b_y").value; }

  /// Xavier-uniform weights, zero biases; architectures may override specific
  /// biases (the LSTM forget gate starts at 1).
  virtual void initialize(const InitOptions& options);

  /// Teacher-forced pass over a batch. `logits` receives steps * size rows in
  /// time-major order.
  virtual std::unique_ptr<ForwardCache<T>> forward(const Batch& batch, const ForwardOptions& options,
                                                   Matrix<T>& logits) const = 0;

  /// BPTT for a matching forward call; accumulates into each parameter's grad.
  virtual void backward(const ForwardCache<T>& cache, const Matrix<T>& dlogits) = 0;

  virtual DecoderState<T> initial_state() const = 0;
  /// Feeds `token` and writes the next-token logits (1 x |V|).
  virtual void advance(DecoderState<T>& state, TokenId token, Matrix<T>& logits) const = 0;

 protected:
  void add_parameter(std::string name, std::size_t rows, std::size_t cols) {
    params_.emplace_back(std::move(name), rows, cols);
  }
  /// Gathers embedding rows for `ids` into a (ids.size() x s) matrix.
  Matrix<T> embed(std::span<const TokenId> ids) const;
  /// Scatter-adds rows of `d` into the embedding gradient.
  void accumulate_embedding_grad(std::span<const TokenId> ids, const Matrix<T>& d);
  void check_tokens(std::span<const TokenId> ids) const;

  Architecture arch_;
  ModelDims dims_;
  std::vector<Parameter<T>> params_;
};

/// Inverted dropout mask with entries 0 or 1 / (1 - p).
template <typename T>
Matrix<T> dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng);

/// In-place elementwise scaling by a mask of the same shape.
template <typename T>
void apply_mask(Matrix<T>& m, const Matrix<T>& mask);

template <typename T>
std::unique_ptr<LanguageModel<T>> make_model(Architecture arch, const ModelDims& dims, const InitOptions& init);

/// Same architecture, dims and values in another precision.
template <typename To, typename From>
std::unique_ptr<LanguageModel<To>> convert_model(const LanguageModel<From>& model);

}  // namespace hierolm
