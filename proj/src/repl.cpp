#include "hierolm/repl.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "hierolm/error.hpp"
#include "hierolm/inference.hpp"

namespace hierolm {
namespace {

bool parse_count(std::string_view text, std::size_t& out) {
  if (text.empty()) return false;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && end == text.data() + text.size();
}

}  // namespace

std::string Repl::usage() {
  return "commands:\n"
         "  <tokens>   append whitespace-separated tokens to the context\n"
         "  ?k         top-k next tokens (default 5)\n"
         "  !n         greedily append n generated tokens\n"
         "  pop        drop the last context token\n"
         "  score      log-probabilities of the context tokens\n"
         "  reset      clear the context\n"
         "  help       this text\n"
         "  quit       leave\n";
}

std::vector<TokenId> Repl::encoded() const {
  std::vector<TokenId> ids{kBosId};
  ids.insert(ids.end(), ids_.begin(), ids_.end());
  return ids;
}

std::string Repl::show_context() const {
  std::string s = "context:";
  for (const auto& t : tokens_) s += " " + t;
  if (tokens_.empty()) s += " (empty)";
  return s + "\n";
}

void Repl::push(const std::string& token, TokenId id) {
  tokens_.push_back(token);
  ids_.push_back(id);
}

Repl::Reply Repl::handle(std::string_view raw) {
  const std::size_t first = raw.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const std::string_view line = raw.substr(first, raw.find_last_not_of(" \t\r\n") - first + 1);
  auto usage_error = [](const std::string& why) { return Reply{"error: " + why + "\n" + usage(), true}; };

  if (line == "quit" || line == "exit") return {"", false, true};
  if (line == "help") return {usage()};
  if (line == "reset") {
    tokens_.clear();
    ids_.clear();
    return {show_context()};
  }
  if (line == "pop") {
    if (tokens_.empty()) return usage_error("context is already empty");
    tokens_.pop_back();
    ids_.pop_back();
    return {show_context()};
  }
  if (line == "score") {
    if (tokens_.empty()) return usage_error("context is empty");
    const auto ids = encoded();
    const auto log_probs = score_sentence(model_, std::span<const TokenId>(ids));
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    double total = 0.0;
    for (std::size_t i = 0; i < log_probs.size(); ++i) {
      out << std::left << std::setw(16) << tokens_[i] << log_probs[i] << "\n";
      total += log_probs[i];
    }
    out << "total " << total << "  perplexity " << std::exp(-total / static_cast<double>(log_probs.size())) << "\n";
    return {out.str()};
  }
  if (line.front() == '?') {
    std::size_t k = 5;
    if (line.size() > 1 && !parse_count(line.substr(1), k)) return usage_error("?k needs an integer k");
    if (k < 1 || k > vocab_.size())
      return usage_error("k must be between 1 and " + std::to_string(vocab_.size()));
    const auto ids = encoded();
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    std::size_t rank = 1;
    for (const Candidate& c : predict_topk(model_, std::span<const TokenId>(ids), k))
      out << std::right << std::setw(3) << rank++ << ". " << std::left << std::setw(16) << vocab_.token(c.id)
          << c.probability << "\n";
    return {out.str()};
  }
  if (line.front() == '!') {
    std::size_t n = 0;
    if (!parse_count(line.substr(1), n) || n < 1) return usage_error("!n needs a positive integer n");
    const auto ids = encoded();
    const auto generated = greedy_complete(model_, std::span<const TokenId>(ids), n);
    std::string text = "generated:";
    for (TokenId id : generated) {
      text += " " + vocab_.token(id);
      if (id != kEosId) push(vocab_.token(id), id);
    }
    return {text + "\n" + show_context()};
  }
  if (line.front() == ':' ) return usage_error("unknown command '" + std::string(line) + "'");

  std::string warnings;
  for (const std::string& tok : tokenize_line(line)) {
    const auto id = vocab_.find(tok);
    if (id && *id != kUnkId && *id < kNumSpecialTokens) return usage_error("special token '" + tok + "' not allowed");
    if (!id) warnings += "warning: '" + tok + "' is not in the vocabulary, using " + vocab_.token(kUnkId) + "\n";
    push(tok, id ? *id : kUnkId);
  }
  return {warnings + show_context()};
}

void Repl::run(std::istream& in, std::ostream& out, bool prompt) {
  std::string line;
  while (true) {
    if (prompt) out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    Reply reply;
    try {
      reply = handle(line);
    } catch (const Error& e) {
      reply = {std::string("error: ") + e.what() + "\n", true};
    }
    out << reply.text << std::flush;
    if (reply.quit) break;
  }
}

}  // namespace hierolm
