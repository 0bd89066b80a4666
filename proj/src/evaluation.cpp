#include "hierolm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "hierolm/inference.hpp"
#include "hierolm/ops.hpp"

namespace hierolm {
namespace {

// Calls fn(sentence index, nll, target, prediction) for every non-PAD
// predicting position.
template <typename T, typename Fn>
void for_each_position(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                       std::size_t batch_size, Fn&& fn) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  Matrix<T> logits;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const std::size_t end = std::min(sentences.size(), start + batch_size);
    const Batch batch = Batch::from_sentences(sentences.subspan(start, end - start));
    model.forward(batch, ForwardOptions{}, logits);
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      for (std::size_t r = 0; r < batch.size; ++r) {
        const TokenId target = batch.target(t, r);
        if (target == kPadId) continue;
        const auto row = logits.row(t * batch.size + r);
        const double nll = log_sum_exp(row) - static_cast<double>(row[static_cast<std::size_t>(target)]);
        fn(start + r, nll, target, argmax(row));
      }
    }
  }
}

constexpr std::array<std::size_t, 4> kBucketUpper = {5, 10, 15, 20};

std::size_t bucket_of(std::size_t tokens) {
  for (std::size_t b = 0; b < kBucketUpper.size(); ++b)
    if (tokens <= kBucketUpper[b]) return b;
  return kBucketUpper.size();
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {{"perplexity", perplexity}, {"mean_nll", mean_nll},       {"accuracy", accuracy},
          {"macro_f1", macro_f1},     {"token_count", token_count}, {"class_count", class_count}};
}

template <typename T>
EvalReport evaluate(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                    const EvalOptions& options) {
  const std::size_t vocab = model.dims().vocab_size;
  std::vector<std::size_t> gold(vocab, 0), predicted(vocab, 0), hits(vocab, 0);
  // Summed per sentence, then in sentence order, so the total does not
  // depend on the batch size.
  std::vector<double> sentence_nll(sentences.size(), 0.0);
  std::size_t n = 0, correct = 0;
  for_each_position(model, sentences, options.batch_size,
                    [&](std::size_t idx, double nll, TokenId target, TokenId pred) {
                      if (!options.count_eos && target == kEosId) return;
                      sentence_nll[idx] += nll;
                      ++n;
                      ++gold[static_cast<std::size_t>(target)];
                      ++predicted[static_cast<std::size_t>(pred)];
                      if (pred == target) {
                        ++correct;
                        ++hits[static_cast<std::size_t>(target)];
                      }
                    });
  if (n == 0) throw Error(ErrorCode::kEmptySplit, "no predicting positions to evaluate");

  double nll_sum = 0.0;
  for (double v : sentence_nll) nll_sum += v;
  EvalReport report;
  report.token_count = n;
  report.mean_nll = nll_sum / static_cast<double>(n);
  report.perplexity = std::exp(report.mean_nll);
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < vocab; ++c) {
    if (gold[c] == 0) continue;
    ++report.class_count;
    f1_sum += 2.0 * static_cast<double>(hits[c]) / static_cast<double>(gold[c] + predicted[c]);
  }
  report.macro_f1 = f1_sum / static_cast<double>(report.class_count);
  return report;
}

nlohmann::json MultiShotReport::to_json() const {
  return {{"max_shots", max_shots}, {"sentences", sentences},     {"counts", counts},
          {"correct", correct},     {"accuracy", accuracy},       {"joint_accuracy", joint_accuracy}};
}

template <typename T>
MultiShotReport multishot(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                          std::size_t max_shots) {
  if (max_shots < 1) throw Error(ErrorCode::kInvalidArgument, "max_shots must be >= 1");
  const std::size_t K = max_shots;
  MultiShotReport report;
  report.max_shots = K;
  report.counts.assign(K, 0);
  report.correct.assign(K, 0);
  std::vector<std::size_t> joint(K, 0);

  Matrix<T> logits, gen_logits;
  for (const EncodedSentence& ids : sentences) {
    const std::size_t n = ids.size();
    if (n < 2 || n - 1 < K + 1) continue;
    ++report.sentences;
    DecoderState<T> state = model.initial_state();
    for (std::size_t t = 1; t <= n - K; ++t) {
      model.advance(state, ids[t - 1], logits);
      DecoderState<T> gen = state;
      gen_logits = logits;
      bool all_correct = true;
      bool stopped = false;
      for (std::size_t k = 1; k <= K; ++k) {
        ++report.counts[k - 1];
        bool hit = false;
        TokenId pred = kPadId;
        if (!stopped) {
          pred = argmax(gen_logits.row(0));
          hit = pred == ids[t + k - 1];
        }
        if (hit) ++report.correct[k - 1];
        all_correct = all_correct && hit;
        if (all_correct) ++joint[k - 1];
        if (stopped) continue;
        if (pred == kEosId) {
          stopped = true;
        } else if (k < K) {
          model.advance(gen, pred, gen_logits);
        }
      }
    }
  }
  report.accuracy.assign(K, 0.0);
  report.joint_accuracy.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    if (report.counts[k] == 0) continue;
    report.accuracy[k] = static_cast<double>(report.correct[k]) / static_cast<double>(report.counts[k]);
    report.joint_accuracy[k] = static_cast<double>(joint[k]) / static_cast<double>(report.counts[k]);
  }
  return report;
}

std::string LengthBucket::label() const {
  return "[" + std::to_string(min_length) + "," + (max_length ? std::to_string(max_length) : std::string("inf")) +
         (max_length ? "]" : ")");
}

nlohmann::json LengthBucketReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : buckets)
    out.push_back({{"bucket", b.label()},
                   {"min_length", b.min_length},
                   {"max_length", b.max_length ? nlohmann::json(b.max_length) : nlohmann::json(nullptr)},
                   {"sentences", b.sentences},
                   {"positions", b.positions},
                   {"correct", b.correct},
                   {"accuracy", b.accuracy}});
  return out;
}

template <typename T>
LengthBucketReport length_buckets(const LanguageModel<T>& model, std::span<const EncodedSentence> sentences,
                                  const EvalOptions& options) {
  LengthBucketReport report;
  std::size_t lo = 1;
  for (std::size_t hi : kBucketUpper) {
    report.buckets.push_back({lo, hi});
    lo = hi + 1;
  }
  report.buckets.push_back({lo, 0});
  for (const auto& s : sentences) ++report.buckets[bucket_of(s.size() >= 2 ? s.size() - 2 : 0)].sentences;
  for_each_position(model, sentences, options.batch_size, [&](std::size_t i, double, TokenId target, TokenId pred) {
    if (!options.count_eos && target == kEosId) return;
    LengthBucket& b = report.buckets[bucket_of(sentences[i].size() - 2)];
    ++b.positions;
    if (pred == target) ++b.correct;
  });
  for (auto& b : report.buckets)
    b.accuracy = b.positions ? static_cast<double>(b.correct) / static_cast<double>(b.positions) : 0.0;
  return report;
}

namespace {

// Top eigenpair of a symmetric PSD matrix by power iteration.
std::pair<double, std::vector<double>> power_iteration(const Matrix<double>& c, std::uint64_t seed) {
  const std::size_t n = c.rows();
  Rng rng(seed);
  std::vector<double> v(n), w(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  auto normalize = [](std::vector<double>& x) {
    double norm = 0.0;
    for (double e : x) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& e : x) e /= norm;
    return norm;
  };
  normalize(v);
  double lambda = 0.0;
  for (int iter = 0; iter < 1000; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const auto row = c.row(i);
      for (std::size_t j = 0; j < n; ++j) acc += row[j] * v[j];
      w[i] = acc;
    }
    lambda = normalize(w);
    if (lambda == 0.0) break;
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) delta += (w[i] - v[i]) * (w[i] - v[i]);
    v.swap(w);
    if (std::sqrt(delta) < 1e-9) break;
  }
  // Rayleigh quotient is more accurate than the last norm.
  double rq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += c(i, j) * v[j];
    rq += v[i] * acc;
  }
  std::size_t big = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs(v[i]) > std::abs(v[big])) big = i;
  if (v[big] < 0.0)
    for (double& e : v) e = -e;
  return {std::max(rq, 0.0), v};
}

}  // namespace

template <typename T>
EmbeddingProjection pca_project(const Matrix<T>& embeddings, std::span<const TokenId> tokens) {
  EmbeddingProjection proj;
  if (tokens.empty()) {
    for (std::size_t i = 0; i < embeddings.rows(); ++i) proj.tokens.push_back(static_cast<TokenId>(i));
  } else {
    proj.tokens.assign(tokens.begin(), tokens.end());
  }
  const std::size_t n = proj.tokens.size(), s = embeddings.cols();
  if (n < 3) throw Error(ErrorCode::kInvalidArgument, "PCA needs at least 3 tokens, got " + std::to_string(n));

  Matrix<double> x(n, s);
  for (std::size_t r = 0; r < n; ++r) {
    const TokenId id = proj.tokens[r];
    if (id < 0 || static_cast<std::size_t>(id) >= embeddings.rows())
      throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " outside embedding matrix");
    const auto src = embeddings.row(static_cast<std::size_t>(id));
    for (std::size_t j = 0; j < s; ++j) x(r, j) = static_cast<double>(src[j]);
  }
  std::vector<double> mean(s, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < s; ++j) mean[j] += x(r, j);
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < s; ++j) x(r, j) -= mean[j];

  Matrix<double> cov(s, s);
  matmul_tn_accumulate(x, x, cov);
  double trace = 0.0;
  for (std::size_t j = 0; j < s; ++j) trace += cov(j, j);
  for (double& v : cov.values()) v /= static_cast<double>(n - 1);
  trace /= static_cast<double>(n - 1);
  if (!(trace > 1e-12)) throw Error(ErrorCode::kDegenerateRank, "selected embeddings have no variance");

  proj.components.resize(2, s);
  for (std::size_t comp = 0; comp < 2; ++comp) {
    auto [lambda, v] = power_iteration(cov, 0x5CA1AB1EULL + comp);
    proj.eigenvalues[comp] = lambda;
    proj.explained_variance_ratio[comp] = lambda / trace;
    std::copy(v.begin(), v.end(), proj.components.row(comp).begin());
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) cov(i, j) -= lambda * v[i] * v[j];
  }
  matmul_nt(x, proj.components, proj.coordinates);
  return proj;
}

std::string EmbeddingProjection::to_csv(const Vocabulary& vocab) const {
  std::ostringstream out;
  out << std::setprecision(9) << "token,x,y\n";
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    std::string tok = vocab.contains(tokens[r]) ? vocab.token(tokens[r]) : std::to_string(tokens[r]);
    if (tok.find_first_of(",\"") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : tok) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      tok = quoted + "\"";
    }
    out << tok << ',' << coordinates(r, 0) << ',' << coordinates(r, 1) << '\n';
  }
  return out.str();
}

nlohmann::json FullReport::to_json() const {
  return {{"evaluation", eval.to_json()}, {"multishot", multishot.to_json()}, {"length_buckets", buckets.to_json()}};
}

std::string FullReport::to_text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "perplexity  " << eval.perplexity << "\n"
      << "accuracy    " << eval.accuracy << "\n"
      << "macro_f1    " << eval.macro_f1 << "\n"
      << "positions   " << eval.token_count << "  (classes " << eval.class_count << ")\n\n";
  out << "shot  accuracy  joint     anchors\n";
  for (std::size_t k = 0; k < multishot.accuracy.size(); ++k)
    out << std::left << std::setw(6) << k + 1 << std::setw(10) << multishot.accuracy[k] << std::setw(10)
        << multishot.joint_accuracy[k] << multishot.counts[k] << "\n";
  out << "\nlength    sentences  positions  accuracy\n";
  for (const auto& b : buckets.buckets)
    out << std::left << std::setw(10) << b.label() << std::setw(11) << b.sentences << std::setw(11) << b.positions
        << b.accuracy << "\n";
  return out.str();
}

#define HIEROLM_INSTANTIATE_EVAL(T)                                                                                \
  template EvalReport evaluate<T>(const LanguageModel<T>&, std::span<const EncodedSentence>, const EvalOptions&); \
  template MultiShotReport multishot<T>(const LanguageModel<T>&, std::span<const EncodedSentence>, std::size_t);  \
  template LengthBucketReport length_buckets<T>(const LanguageModel<T>&, std::span<const EncodedSentence>,        \
                                                const EvalOptions&);                                             \
  template EmbeddingProjection pca_project<T>(const Matrix<T>&, std::span<const TokenId>);

HIEROLM_INSTANTIATE_EVAL(float)
HIEROLM_INSTANTIATE_EVAL(double)

}  // namespace hierolm
