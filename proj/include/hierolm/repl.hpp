#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/corpus.hpp"
#include "hierolm/model.hpp"

namespace hierolm {

/// Line-oriented completion session. Plain tokens extend the context;
/// `?k`, `!n`, `pop`, `score`, `reset`, `help` and `quit` are commands.
class Repl {
 public:
  Repl(const LanguageModel<float>& model, const Vocabulary& vocab) : model_(model), vocab_(vocab) {}

  struct Reply {
    std::string text;
    bool error = false;
    bool quit = false;
  };

  Reply handle(std::string_view line);

  const std::vector<std::string>& context() const noexcept { return tokens_; }
  const std::vector<TokenId>& context_ids() const noexcept { return ids_; }

  void run(std::istream& in, std::ostream& out, bool prompt = true);

  static std::string usage();

 private:
  std::vector<TokenId> encoded() const;
  std::string show_context() const;
  void push(const std::string& token, TokenId id);

  const LanguageModel<float>& model_;
  const Vocabulary& vocab_;
  std::vector<std::string> tokens_;
  std::vector<TokenId> ids_;
};

}  // namespace hierolm
