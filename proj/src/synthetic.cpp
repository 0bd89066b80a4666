#include "hierolm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

namespace hierolm {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_rule_name(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

GrammarAlternative parse_alternative(std::string_view text, std::size_t line_no) {
  auto fail = [&](const std::string& msg) {
    return Error(ErrorCode::kParseError, "grammar line " + std::to_string(line_no) + ": " + msg);
  };
  GrammarAlternative alt;
  Sentence words;
  try {
    words = tokenize_line(text);
  } catch (const Error&) {
    throw fail("empty alternative");
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    if (w.size() > 1 && w[0] == '*' && i + 1 == words.size()) {
      try {
        std::size_t used = 0;
        alt.weight = std::stod(w.substr(1), &used);
        if (used != w.size() - 1) throw fail("bad weight '" + w + "'");
      } catch (const std::logic_error&) {
        throw fail("bad weight '" + w + "'");
      }
      if (!(alt.weight > 0.0) || !std::isfinite(alt.weight)) throw fail("weight must be positive");
      continue;
    }
    if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
      std::string name = w.substr(1, w.size() - 2);
      if (!is_rule_name(name)) throw fail("bad rule reference '" + w + "'");
      alt.symbols.push_back({true, std::move(name)});
    } else {
      alt.symbols.push_back({false, w});
    }
  }
  if (alt.symbols.empty()) throw fail("alternative has only a weight");
  return alt;
}

}  // namespace

Grammar Grammar::parse(std::string_view text) {
  Grammar g;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::kParseError, "grammar line " + std::to_string(line_no) + ": expected NAME = ...");
    std::string name(trim(line.substr(0, eq)));
    if (!is_rule_name(name))
      throw Error(ErrorCode::kParseError, "grammar line " + std::to_string(line_no) + ": bad rule name '" + name + "'");
    if (g.rules_.count(name))
      throw Error(ErrorCode::kParseError, "grammar line " + std::to_string(line_no) + ": duplicate rule " + name);
    std::vector<GrammarAlternative> alts;
    std::string_view body = line.substr(eq + 1);
    std::size_t pos = 0;
    while (pos <= body.size()) {
      std::size_t bar = body.find('|', pos);
      if (bar == std::string_view::npos) bar = body.size();
      alts.push_back(parse_alternative(body.substr(pos, bar - pos), line_no));
      pos = bar + 1;
    }
    if (g.start_.empty()) g.start_ = name;
    g.rules_.emplace(std::move(name), std::move(alts));
    if (end == text.size()) break;
  }
  if (g.start_.empty()) throw Error(ErrorCode::kParseError, "grammar has no rules");

  // Every reference resolves and no rule reaches itself.
  enum class Mark { kNone, kActive, kDone };
  std::map<std::string, Mark> marks;
  std::function<void(const std::string&)> visit = [&](const std::string& rule) {
    Mark& m = marks[rule];
    if (m == Mark::kDone) return;
    if (m == Mark::kActive) throw Error(ErrorCode::kParseError, "grammar is recursive through " + rule);
    m = Mark::kActive;
    for (const auto& alt : g.rules_.at(rule)) {
      for (const auto& sym : alt.symbols) {
        if (!sym.nonterminal) continue;
        if (!g.rules_.count(sym.text)) throw Error(ErrorCode::kParseError, "undefined rule <" + sym.text + ">");
        visit(sym.text);
      }
    }
    marks[rule] = Mark::kDone;
  };
  for (const auto& [name, alts] : g.rules_) visit(name);
  return g;
}

const std::vector<GrammarAlternative>& Grammar::alternatives(const std::string& rule) const {
  auto it = rules_.find(rule);
  if (it == rules_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown rule " + rule);
  return it->second;
}

Sentence Grammar::sample(Rng& rng) const {
  Sentence out;
  expand(start_, rng, out);
  return out;
}

void Grammar::expand(const std::string& rule, Rng& rng, Sentence& out) const {
  const auto& alts = alternatives(rule);
  double total = 0.0;
  for (const auto& a : alts) total += a.weight;
  double u = rng.uniform() * total;
  std::size_t pick = alts.size() - 1;
  for (std::size_t i = 0; i < alts.size(); ++i) {
    if (u < alts[i].weight) {
      pick = i;
      break;
    }
    u -= alts[i].weight;
  }
  for (const auto& sym : alts[pick].symbols) {
    if (sym.nonterminal) {
      expand(sym.text, rng, out);
    } else {
      out.push_back(sym.text);
    }
  }
}

SentenceDistribution SentenceDistribution::enumerate(const Grammar& grammar, std::size_t max_outcomes) {
  using Outcomes = std::vector<std::pair<Sentence, double>>;
  std::map<std::string, Outcomes> memo;
  std::function<const Outcomes&(const std::string&)> expand = [&](const std::string& rule) -> const Outcomes& {
    if (auto it = memo.find(rule); it != memo.end()) return it->second;
    const auto& alts = grammar.alternatives(rule);
    double total = 0.0;
    for (const auto& a : alts) total += a.weight;
    Outcomes result;
    for (const auto& alt : alts) {
      Outcomes partial{{Sentence{}, alt.weight / total}};
      for (const auto& sym : alt.symbols) {
        if (!sym.nonterminal) {
          for (auto& [s, p] : partial) s.push_back(sym.text);
          continue;
        }
        const Outcomes& sub = expand(sym.text);
        if (partial.size() * sub.size() > max_outcomes)
          throw Error(ErrorCode::kInvalidArgument, "grammar support exceeds " + std::to_string(max_outcomes));
        Outcomes next;
        next.reserve(partial.size() * sub.size());
        for (const auto& [s, p] : partial) {
          for (const auto& [t, q] : sub) {
            Sentence joined = s;
            joined.insert(joined.end(), t.begin(), t.end());
            next.emplace_back(std::move(joined), p * q);
          }
        }
        partial = std::move(next);
      }
      result.insert(result.end(), partial.begin(), partial.end());
      if (result.size() > max_outcomes)
        throw Error(ErrorCode::kInvalidArgument, "grammar support exceeds " + std::to_string(max_outcomes));
    }
    return memo.emplace(rule, std::move(result)).first->second;
  };

  std::map<Sentence, double> merged;
  for (const auto& [s, p] : expand(grammar.start())) merged[s] += p;

  SentenceDistribution dist;
  dist.outcomes_.assign(merged.begin(), merged.end());
  dist.build_trie();
  return dist;
}

void SentenceDistribution::build_trie() {
  trie_.assign(1, TrieNode{});
  for (const auto& [s, p] : outcomes_) {
    std::size_t node = 0;
    trie_[node].mass += p;
    for (const std::string& tok : s) {
      auto it = trie_[node].children.find(tok);
      std::size_t child;
      if (it == trie_[node].children.end()) {
        child = trie_.size();
        trie_[node].children.emplace(tok, child);
        trie_.emplace_back();
      } else {
        child = it->second;
      }
      node = child;
      trie_[node].mass += p;
    }
    trie_[node].end_mass += p;
  }
}

std::size_t SentenceDistribution::find_node(std::span<const std::string> prefix) const {
  std::size_t node = 0;
  for (const std::string& tok : prefix) {
    auto it = trie_[node].children.find(tok);
    if (it == trie_[node].children.end()) return static_cast<std::size_t>(-1);
    node = it->second;
  }
  return node;
}

double SentenceDistribution::entropy() const {
  double h = 0.0;
  for (const auto& [s, p] : outcomes_) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double SentenceDistribution::expected_predictions() const {
  double e = 0.0;
  for (const auto& [s, p] : outcomes_) e += p * static_cast<double>(s.size() + 1);
  return e;
}

std::map<std::string, double> SentenceDistribution::next_token_distribution(std::span<const std::string> prefix) const {
  std::map<std::string, double> out;
  const std::size_t node = find_node(prefix);
  if (node == static_cast<std::size_t>(-1) || trie_[node].mass <= 0.0) return out;
  const TrieNode& n = trie_[node];
  for (const auto& [tok, child] : n.children) out[tok] += trie_[child].mass / n.mass;
  if (n.end_mass > 0.0) out[std::string(kEosToken)] += n.end_mass / n.mass;
  return out;
}

std::vector<std::map<std::string, double>> SentenceDistribution::conditionals(const Sentence& sentence) const {
  std::vector<std::map<std::string, double>> out;
  out.reserve(sentence.size() + 1);
  for (std::size_t t = 0; t <= sentence.size(); ++t)
    out.push_back(next_token_distribution(std::span<const std::string>(sentence.data(), t)));
  return out;
}

std::vector<std::map<std::string, double>> SentenceDistribution::position_marginals(std::size_t positions) const {
  std::vector<std::map<std::string, double>> out(positions);
  for (const auto& [s, p] : outcomes_) {
    for (std::size_t j = 0; j < positions; ++j) {
      if (j < s.size()) {
        out[j][s[j]] += p;
      } else if (j == s.size()) {
        out[j][std::string(kEosToken)] += p;
      } else {
        out[j][std::string(kPadToken)] += p;
      }
    }
  }
  return out;
}

MultiShotOracle multishot_oracle(const SentenceDistribution& dist, std::size_t max_shots) {
  if (max_shots < 1) throw Error(ErrorCode::kInvalidArgument, "max_shots must be >= 1");
  const std::size_t K = max_shots;
  const std::string eos(kEosToken);

  // Mass of each k-th target token, grouped by the trie node of the prefix.
  std::map<std::pair<std::size_t, std::size_t>, std::map<std::string, double>> grouped;
  std::map<std::size_t, std::vector<std::string>> greedy_cache;
  std::vector<double> greedy_correct(K, 0.0);
  double anchor_mass = 0.0;

  auto greedy_from = [&](std::size_t node) -> const std::vector<std::string>& {
    auto it = greedy_cache.find(node);
    if (it != greedy_cache.end()) return it->second;
    std::vector<std::string> out;
    std::size_t cur = node;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& n = dist.trie_[cur];
      std::string best = eos;
      double best_p = n.end_mass;
      for (const auto& [tok, child] : n.children) {
        const double p = dist.trie_[child].mass;
        if (p > best_p || (p == best_p && tok < best)) {
          best = tok;
          best_p = p;
        }
      }
      out.push_back(best);
      if (best == eos) break;
      cur = n.children.at(best);
    }
    return greedy_cache.emplace(node, std::move(out)).first->second;
  };

  for (const auto& [s, p] : dist.outcomes()) {
    const std::size_t T = s.size();
    const std::size_t n = T + 2;
    if (n - 1 < K + 1) continue;
    // target(j) is the encoded token at index j (1..T+1).
    auto target = [&](std::size_t j) -> const std::string& { return j <= T ? s[j - 1] : eos; };
    std::size_t node = 0;
    for (std::size_t t = 1; t <= n - K; ++t) {
      // node == trie node of encoded prefix ids[0..t-1], i.e. tokens s[0..t-2].
      anchor_mass += p;
      const auto& greedy = greedy_from(node);
      for (std::size_t k = 1; k <= K; ++k) {
        const std::string& gold = target(t + k - 1);
        grouped[{node, k}][gold] += p;
        if (k <= greedy.size() && greedy[k - 1] == gold)
          greedy_correct[k - 1] += p;
      }
      if (t <= T) node = dist.trie_[node].children.at(s[t - 1]);
    }
  }

  MultiShotOracle oracle;
  oracle.bayes_accuracy.assign(K, 0.0);
  oracle.greedy_accuracy.assign(K, 0.0);
  if (anchor_mass <= 0.0) return oracle;
  for (const auto& [key, masses] : grouped) {
    double best = 0.0;
    for (const auto& [tok, m] : masses) best = std::max(best, m);
    oracle.bayes_accuracy[key.second - 1] += best;
  }
  for (std::size_t k = 0; k < K; ++k) {
    oracle.bayes_accuracy[k] /= anchor_mass;
    oracle.greedy_accuracy[k] = greedy_correct[k] / anchor_mass;
  }
  return oracle;
}

SyntheticCorpus generate_synthetic_corpus(const Grammar& grammar, std::size_t n, std::uint64_t seed) {
  SyntheticCorpus corpus{{}, SentenceDistribution::enumerate(grammar)};
  Rng rng(seed);
  corpus.sentences.reserve(n);
  for (std::size_t i = 0; i < n; ++i) corpus.sentences.push_back(grammar.sample(rng));
  return corpus;
}

}  // namespace hierolm
