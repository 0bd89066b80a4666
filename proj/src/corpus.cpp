#include "hierolm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hierolm/random.hpp"

namespace hierolm {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace

Sentence tokenize_line(std::string_view line) {
  Sentence tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) tokens.emplace_back(line.substr(start, i - start));
  }
  if (tokens.empty()) throw Error(ErrorCode::kEmptyLine, "line contains only whitespace");
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

bool is_valid_utf8(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= text.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += extra + 1;
  }
  return true;
}

Vocabulary::Vocabulary() {
  for (std::string_view special : {kPadToken, kBosToken, kEosToken, kUnkToken}) {
    token_to_id_.emplace(std::string(special), static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.emplace_back(special);
  }
}

Vocabulary Vocabulary::build(std::span<const Sentence> sentences, std::size_t min_count) {
  if (min_count < 1) throw Error(ErrorCode::kInvalidArgument, "min_count must be >= 1");
  if (sentences.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot build a vocabulary from no sentences");
  std::unordered_map<std::string, std::size_t> counts;
  for (const Sentence& s : sentences)
    for (const std::string& tok : s) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_count) ranked.emplace_back(tok, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocabulary vocab;
  for (auto& [tok, n] : ranked) {
    // A corpus token spelled like a special keeps the special's id.
    if (vocab.token_to_id_.count(tok)) continue;
    vocab.token_to_id_.emplace(tok, static_cast<TokenId>(vocab.id_to_token_.size()));
    vocab.id_to_token_.push_back(tok);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary vocab;
  if (tokens.size() < static_cast<std::size_t>(kNumSpecialTokens))
    throw Error(ErrorCode::kParseError, "vocabulary is missing special tokens");
  for (TokenId i = 0; i < kNumSpecialTokens; ++i) {
    if (tokens[i] != vocab.id_to_token_[i])
      throw Error(ErrorCode::kParseError, "special token " + std::to_string(i) + " is '" + tokens[i] + "'");
  }
  for (std::size_t i = kNumSpecialTokens; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw Error(ErrorCode::kParseError, "empty token at id " + std::to_string(i));
    if (!vocab.token_to_id_.emplace(tokens[i], static_cast<TokenId>(i)).second)
      throw Error(ErrorCode::kParseError, "duplicate token '" + tokens[i] + "'");
    vocab.id_to_token_.push_back(std::move(tokens[i]));
  }
  return vocab;
}

Vocabulary Vocabulary::parse_text(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    tokens.emplace_back(line);
    start = end + 1;
  }
  return from_tokens(std::move(tokens));
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const std::string& tok : id_to_token_) {
    out += tok;
    out += '\n';
  }
  return out;
}

TokenId Vocabulary::id(std::string_view token) const {
  return find(token).value_or(kUnkId);
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!contains(id)) throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

EncodedSentence encode(const Sentence& sentence, const Vocabulary& vocab) {
  EncodedSentence ids;
  ids.reserve(sentence.size() + 2);
  ids.push_back(kBosId);
  for (const std::string& tok : sentence) ids.push_back(vocab.id(tok));
  ids.push_back(kEosId);
  return ids;
}

Sentence decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  Sentence out;
  for (TokenId id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

SplitIndices split_dataset(std::size_t sentence_count, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train == 0 || ratios.validation == 0 || ratios.test == 0)
    throw Error(ErrorCode::kInvalidArgument, "split ratios must be positive");
  if (sentence_count < 3)
    throw Error(ErrorCode::kTooFewSentences, "need at least 3 sentences to split, got " + std::to_string(sentence_count));

  std::vector<std::size_t> order(sentence_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  const std::size_t total = ratios.train + ratios.validation + ratios.test;
  const std::size_t n_val = sentence_count * ratios.validation / total;
  const std::size_t n_test = sentence_count * ratios.test / total;
  const std::size_t n_train = sentence_count - n_val - n_test;

  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

DatasetSplit encode_split(std::span<const Sentence> sentences, const SplitIndices& split, const Vocabulary& vocab) {
  auto encode_all = [&](const std::vector<std::size_t>& indices) {
    std::vector<EncodedSentence> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(encode(sentences[i], vocab));
    return out;
  };
  return DatasetSplit{encode_all(split.train), encode_all(split.validation), encode_all(split.test)};
}

CorpusFile parse_corpus(std::string_view text) {
  CorpusFile corpus;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (!is_valid_utf8(line))
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + " is not valid UTF-8");
    try {
      corpus.sentences.push_back(tokenize_line(line));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyLine) throw;
      ++corpus.blank_lines;
    }
  }
  return corpus;
}

CorpusFile load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path));
}

CorpusStats compute_stats(std::span<const Sentence> sentences, const SplitIndices* split) {
  CorpusStats stats;
  stats.sentence_count = sentences.size();
  std::unordered_map<std::string_view, bool> seen;
  for (const Sentence& s : sentences) {
    stats.token_count += s.size();
    ++stats.length_histogram[s.size()];
    for (const std::string& tok : s) seen.emplace(tok, true);
  }
  stats.vocab_count = seen.size();
  if (split) {
    stats.train_count = split->train.size();
    stats.validation_count = split->validation.size();
    stats.test_count = split->test.size();
  }
  return stats;
}

std::string format_stats(const CorpusStats& stats) {
  std::ostringstream out;
  out << "sentences   " << stats.sentence_count << "\n"
      << "vocab       " << stats.vocab_count << "\n"
      << "tokens      " << stats.token_count << "\n"
      << "train       " << stats.train_count << "\n"
      << "validation  " << stats.validation_count << "\n"
      << "test        " << stats.test_count << "\n"
      << "length histogram (tokens: sentences)\n";
  for (auto [len, n] : stats.length_histogram) out << "  " << len << ": " << n << "\n";
  return out.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace hierolm
