#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/model.hpp"
#include "hierolm/random.hpp"
#include "hierolm/synthetic.hpp"
#include "hierolm/training.hpp"

namespace testing {

inline std::filesystem::path grammar_path(const std::string& name) {
  return std::filesystem::path(HIEROLM_GRAMMAR_DIR) / name;
}

inline hierolm::Grammar load_grammar(const std::string& name) {
  return hierolm::Grammar::parse(hierolm::read_file(grammar_path(name)));
}

/// Random ids in [4, vocab) wrapped in BOS/EOS.
inline hierolm::EncodedSentence random_sentence(hierolm::Rng& rng, std::size_t tokens, std::size_t vocab) {
  hierolm::EncodedSentence s{hierolm::kBosId};
  for (std::size_t i = 0; i < tokens; ++i)
    s.push_back(static_cast<hierolm::TokenId>(4 + rng.below(vocab - 4)));
  s.push_back(hierolm::kEosId);
  return s;
}

/// Gives every parameter, biases included, uniform values in [-scale, scale].
template <typename T>
void randomize(hierolm::LanguageModel<T>& model, std::uint64_t seed, double scale = 0.5) {
  hierolm::Rng rng(seed);
  for (auto& p : model.parameters())
    for (auto& v : p.value.values()) v = static_cast<T>(rng.uniform(-scale, scale));
}

/// 50 copies of the fixed template, with the prepared split.
inline hierolm::PreparedCorpus fixed_corpus(const hierolm::TrainConfig& config) {
  const auto synth = hierolm::generate_synthetic_corpus(load_grammar("fixed.grammar"), 50, 11);
  return hierolm::prepare_corpus(synth.sentences, config);
}

inline hierolm::TrainConfig small_config(hierolm::Architecture arch = hierolm::Architecture::kLstm) {
  hierolm::TrainConfig c;
  c.architecture = arch;
  c.embed_size = 16;
  c.hidden_size = 16;
  c.batch_size = 8;
  c.initial_lr = 1e-2;
  c.max_epochs = 60;
  return c;
}

}  // namespace testing
