#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/model.hpp"
#include "json.hpp"

namespace hierolm {

struct EvalOptions {
  std::size_t batch_size = 64;
  /// Whether predicting EOS counts as a position. UNK targets always count,
  /// PAD never does.
  bool count_eos = true;
};

struct EvalReport {
  double perplexity = 0.0;  // exp(mean NLL), nats
  double mean_nll = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;  // over classes with gold support
  std::size_t token_count = 0;
  std::size_t class_count = 0;

  nlohmann::json to_json() const;
};

/// Teacher-forced evaluation. Argmax ties go to the smaller id. Throws
/// EmptySplit when there is nothing to evaluate.
template <typename T>
EvalReport evaluate(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                    const EvalOptions& options = {});

struct MultiShotReport {
  std::size_t max_shots = 0;
  std::size_t sentences = 0;          // sentences with enough positions
  std::vector<std::size_t> counts;    // anchors evaluated for shot k
  std::vector<std::size_t> correct;   // k-th generated token == k-th gold token
  std::vector<double> accuracy;       // correct / counts
  std::vector<double> joint_accuracy; // first k generated tokens all correct

  nlohmann::json to_json() const;
};

/// For every sentence with at least K + 1 predicting positions and every
/// anchor t in [1, n - K] (n = encoded length), feeds the gold prefix
/// ids[0..t-1] and greedily generates K tokens, feeding each one back.
/// Generation that emits EOS early leaves the remaining shots wrong.
template <typename T>
MultiShotReport multishot(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                          std::size_t max_shots = 4);

struct LengthBucket {
  std::size_t min_length = 0;
  std::size_t max_length = 0;  // 0 means unbounded
  std::size_t sentences = 0;
  std::size_t positions = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;

  std::string label() const;
};

struct LengthBucketReport {
  std::vector<LengthBucket> buckets;
  nlohmann::json to_json() const;
};

/// Groups sentences by token count T into [1,5], [6,10], [11,15], [16,20],
/// [21,inf) and reports teacher-forced accuracy per group.
template <typename T>
LengthBucketReport length_buckets(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                                  const EvalOptions& options = {});

struct EmbeddingProjection {
  std::vector<TokenId> tokens;
  Matrix<double> coordinates;  // tokens.size() x 2
  Matrix<double> components;   // 2 x s, unit rows
  std::array<double, 2> eigenvalues{};
  std::array<double, 2> explained_variance_ratio{};

  std::string to_csv(const Vocabulary& vocab) const;
};

/// Centers the selected embedding rows (all rows when `tokens` is empty) and
/// projects them onto the top two principal components, found by power
/// iteration with deflation on the covariance. Each component's largest
/// entry is made positive. Throws DegenerateRank for zero variance.
template <typename T>
EmbeddingProjection pca_project(const Matrix<T>& embeddings, std::span<const TokenId> tokens = {});

/// Everything `hierolm eval` prints, as JSON and as aligned text.
struct FullReport {
  EvalReport eval;
  MultiShotReport multishot;
  LengthBucketReport buckets;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

}  // namespace hierolm
