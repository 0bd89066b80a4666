#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hierolm/error.hpp"

namespace hierolm {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kNumSpecialTokens = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Whitespace-free MdC tokens of one transliterated sentence, in order.
using Sentence = std::vector<std::string>;
/// BOS + token ids + EOS.
using EncodedSentence = std::vector<TokenId>;

/// Splits on ASCII whitespace. Throws EmptyLine for a blank line.
Sentence tokenize_line(std::string_view line);

/// Joins tokens with single spaces.
std::string join_tokens(std::span<const std::string> tokens);

bool is_valid_utf8(std::string_view text);

/// Token <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK; regular tokens follow.
class Vocabulary {
 public:
  /// Specials only.
  Vocabulary();

  /// Tokens with frequency >= min_count, in descending frequency with
  /// lexicographic tie-breaking.
  static Vocabulary build(std::span<const Sentence> sentences, std::size_t min_count = 1);

  /// Rebuilds from a full id-ordered token list whose first four entries are
  /// the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  /// One token per line in id order.
  static Vocabulary parse_text(std::string_view text);
  std::string to_text() const;

  std::size_t size() const noexcept { return id_to_token_.size(); }

  /// Id of `token`, or UNK when absent.
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < size(); }

  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

EncodedSentence encode(const Sentence& sentence, const Vocabulary& vocab);

/// Drops BOS/EOS/PAD and maps ids back to tokens.
Sentence decode(std::span<const TokenId> ids, const Vocabulary& vocab);

struct SplitRatios {
  unsigned train = 8;
  unsigned validation = 1;
  unsigned test = 1;
};

/// Positions into the source corpus for each split.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then contiguous slices. Validation and test sizes are
/// floor(n * ratio / total); the remainder goes to train. Throws
/// TooFewSentences when n < 3.
SplitIndices split_dataset(std::size_t sentence_count, SplitRatios ratios, std::uint64_t seed);

template <typename T>
std::vector<T> select(std::span<const T> items, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(items[i]);
  return out;
}

struct DatasetSplit {
  std::vector<EncodedSentence> train;
  std::vector<EncodedSentence> validation;
  std::vector<EncodedSentence> test;
};

DatasetSplit encode_split(std::span<const Sentence> sentences, const SplitIndices& split, const Vocabulary& vocab);

struct CorpusFile {
  std::vector<Sentence> sentences;
  std::size_t blank_lines = 0;
};

/// One sentence per line, UTF-8, LF or CRLF. Blank lines are skipped and
/// counted; invalid UTF-8 is a ParseError naming the line.
CorpusFile parse_corpus(std::string_view text);
CorpusFile load_corpus(const std::filesystem::path& path);

struct CorpusStats {
  std::size_t sentence_count = 0;
  std::size_t vocab_count = 0;  // distinct surface tokens, specials excluded
  std::size_t token_count = 0;
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
  std::size_t test_count = 0;
  std::map<std::size_t, std::size_t> length_histogram;  // tokens per sentence -> sentences
};

CorpusStats compute_stats(std::span<const Sentence> sentences, const SplitIndices* split = nullptr);
std::string format_stats(const CorpusStats& stats);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace hierolm
