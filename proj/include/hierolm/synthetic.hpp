#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/random.hpp"

namespace hierolm {

struct GrammarSymbol {
  bool nonterminal = false;
  std::string text;
};

struct GrammarAlternative {
  std::vector<GrammarSymbol> symbols;
  double weight = 1.0;
};

/// Weighted, non-recursive template grammar. One rule per line:
///
///     NAME = tok tok <OTHER> tok *2 | tok <OTHER>
///
/// `<OTHER>` references a rule, `*w` sets a relative weight (default 1) and
/// `#` starts a comment. The first rule is the start symbol.
class Grammar {
 public:
  static Grammar parse(std::string_view text);

  const std::string& start() const noexcept { return start_; }
  const std::vector<GrammarAlternative>& alternatives(const std::string& rule) const;
  const std::map<std::string, std::vector<GrammarAlternative>>& rules() const noexcept { return rules_; }

  Sentence sample(Rng& rng) const;

 private:
  void expand(const std::string& rule, Rng& rng, Sentence& out) const;

  std::string start_;
  std::map<std::string, std::vector<GrammarAlternative>> rules_;
};

struct MultiShotOracle;

/// Exact finite distribution over sentences produced by a grammar.
class SentenceDistribution {
 public:
  /// Enumerates every derivation; identical sentences from different
  /// derivations are merged. Throws InvalidArgument beyond `max_outcomes`.
  static SentenceDistribution enumerate(const Grammar& grammar, std::size_t max_outcomes = 2'000'000);

  const std::vector<std::pair<Sentence, double>>& outcomes() const noexcept { return outcomes_; }

  /// -sum p ln p over sentences, in nats.
  double entropy() const;
  /// E[T + 1]: predicting positions per sentence including EOS.
  double expected_predictions() const;
  /// Cross-entropy per predicting position of the true distribution.
  double per_token_entropy() const { return entropy() / expected_predictions(); }

  /// P(next token | prefix). EOS appears under kEosToken. Empty when the
  /// prefix has zero probability.
  std::map<std::string, double> next_token_distribution(std::span<const std::string> prefix) const;

  /// The conditional distribution at each of the T + 1 predicting positions
  /// of `sentence`.
  std::vector<std::map<std::string, double>> conditionals(const Sentence& sentence) const;

  /// Marginal distribution of the token at each index; indices past the end
  /// use kEosToken for the first one beyond and kPadToken afterwards.
  std::vector<std::map<std::string, double>> position_marginals(std::size_t positions) const;

 private:
  struct TrieNode {
    std::map<std::string, std::size_t> children;
    double mass = 0.0;
    double end_mass = 0.0;
  };

  void build_trie();
  /// Node for `prefix`, or npos.
  std::size_t find_node(std::span<const std::string> prefix) const;

  std::vector<std::pair<Sentence, double>> outcomes_;
  std::vector<TrieNode> trie_;

  friend MultiShotOracle multishot_oracle(const SentenceDistribution&, std::size_t);
};

/// Accuracies of the k-th predicted token (k = 1..K) over anchors
/// t in [1, n - K] of sentences with at least K + 1 predicting positions
/// (n = encoded length), weighted by sentence probability.
struct MultiShotOracle {
  /// Best achievable: for each prefix, the most likely k-th token among the
  /// anchored continuations.
  std::vector<double> bayes_accuracy;
  /// Greedy decoding under the true conditionals (ties to the
  /// lexicographically smaller token).
  std::vector<double> greedy_accuracy;
};

MultiShotOracle multishot_oracle(const SentenceDistribution& dist, std::size_t max_shots);

struct SyntheticCorpus {
  std::vector<Sentence> sentences;
  SentenceDistribution distribution;
};

/// n i.i.d. sentences sampled by expanding the grammar, plus its exact
/// distribution.
SyntheticCorpus generate_synthetic_corpus(const Grammar& grammar, std::size_t n, std::uint64_t seed);

}  // namespace hierolm
