#include "hierolm/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "httplib.h"
#include "hierolm/corpus.hpp"
#include "hierolm/error.hpp"
#include "hierolm/inference.hpp"

namespace hierolm {
namespace {

using nlohmann::json;

// Thrown inside request handling and turned into an error response.
struct RequestError {
  ServiceResponse response;
};

[[noreturn]] void reject(std::string_view code, std::string_view message, json details = json::object()) {
  throw RequestError{error_response(400, code, message, std::move(details))};
}

json parse_request(std::string_view body, std::initializer_list<std::string_view> allowed) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) reject("MalformedJson", "request body is not valid JSON");
  if (!j.is_object()) reject("MalformedJson", "request body must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      json names = json::array();
      for (auto a : allowed) names.push_back(std::string(a));
      reject("UnknownField", "unknown field '" + key + "'", {{"field", key}, {"allowed", names}});
    }
  }
  return j;
}

// Reads either a token list field or the raw-line "text" field.
std::vector<std::string> read_tokens(const json& j, const char* list_field) {
  const bool has_list = j.contains(list_field), has_text = j.contains("text");
  if (has_list && has_text)
    reject("ConflictingFields", std::string("give either '") + list_field + "' or 'text', not both");
  std::vector<std::string> tokens;
  if (has_text) {
    if (!j["text"].is_string()) reject("InvalidField", "'text' must be a string", {{"field", "text"}});
    const std::string text = j["text"].get<std::string>();
    if (text.find_first_not_of(" \t\r\n\f\v") == std::string::npos) return tokens;
    tokens = tokenize_line(text);
  } else if (has_list) {
    const json& list = j[list_field];
    if (!list.is_array()) reject("InvalidField", std::string("'") + list_field + "' must be an array", {{"field", list_field}});
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!list[i].is_string())
        reject("InvalidField", "tokens must be strings", {{"field", list_field}, {"position", i}});
      std::string tok = list[i].get<std::string>();
      if (tok.empty() || tok.find_first_of(" \t\r\n\f\v") != std::string::npos)
        reject("InvalidToken", "tokens must be non-empty and contain no whitespace", {{"position", i}});
      tokens.push_back(std::move(tok));
    }
  }
  return tokens;
}

std::size_t read_count(const json& j, const char* field, std::size_t fallback) {
  if (!j.contains(field)) return fallback;
  const json& v = j[field];
  if (!v.is_number_integer()) reject("InvalidField", std::string("'") + field + "' must be an integer", {{"field", field}});
  const auto n = v.get<std::int64_t>();
  return n < 0 ? 0 : static_cast<std::size_t>(n);
}

template <typename Fn>
ServiceResponse guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const RequestError& e) {
    return e.response;
  } catch (const Error& e) {
    return error_response(400, error_code_name(e.code()), e.what());
  }
}

}  // namespace

ServiceResponse error_response(int status, std::string_view code, std::string_view message, json details) {
  return {status, {{"code", std::string(code)}, {"message", std::string(message)}, {"details", std::move(details)}}};
}

InferenceService::InferenceService(const Checkpoint& ckpt, std::string source)
    : model_(model_from_checkpoint(ckpt)), vocab_(ckpt.vocab), config_(ckpt.config), source_(std::move(source)) {}

InferenceService::Context InferenceService::resolve(const std::vector<std::string>& tokens) const {
  Context ctx;
  ctx.ids.push_back(kBosId);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto id = vocab_.find(tokens[i]);
    if (id && *id != kUnkId && *id < kNumSpecialTokens)
      reject("InvalidToken", "special token '" + tokens[i] + "' cannot appear in a context", {{"position", i}});
    if (!id) {
      ctx.warnings.push_back({{"code", "UnknownToken"},
                              {"position", i},
                              {"token", tokens[i]},
                              {"mapped_to", vocab_.token(kUnkId)}});
    }
    ctx.ids.push_back(id ? *id : kUnkId);
    ctx.tokens.push_back(tokens[i]);
  }
  return ctx;
}

json InferenceService::model_info() const {
  return {{"architecture", architecture_name(model_->architecture())}, {"vocab_size", vocab_.size()}};
}

ServiceResponse InferenceService::predict(std::string_view body) const {
  return guarded([&] {
    const json j = parse_request(body, {"context", "text", "k"});
    const Context ctx = resolve(read_tokens(j, "context"));
    const std::size_t k = read_count(j, "k", std::min<std::size_t>(5, vocab_.size()));
    if (k < 1 || k > vocab_.size())
      reject("KOutOfRange", "k must be between 1 and " + std::to_string(vocab_.size()),
             {{"k", j.contains("k") ? j["k"] : json(k)}, {"max", vocab_.size()}});
    json candidates = json::array();
    for (const Candidate& c : predict_topk(*model_, ctx.ids, k))
      candidates.push_back({{"token", vocab_.token(c.id)}, {"id", c.id}, {"probability", c.probability}});
    return ServiceResponse{200,
                           {{"candidates", candidates},
                            {"context", ctx.tokens},
                            {"warnings", ctx.warnings},
                            {"model_info", model_info()}}};
  });
}

ServiceResponse InferenceService::complete(std::string_view body) const {
  return guarded([&] {
    const json j = parse_request(body, {"context", "text", "steps"});
    const Context ctx = resolve(read_tokens(j, "context"));
    const std::size_t steps = read_count(j, "steps", 4);
    if (steps < 1 || steps > kMaxSteps)
      reject("StepsOutOfRange", "steps must be between 1 and " + std::to_string(kMaxSteps), {{"max", kMaxSteps}});
    const auto ids = greedy_complete(*model_, ctx.ids, steps);
    json tokens = json::array();
    for (TokenId id : ids) tokens.push_back(vocab_.token(id));
    const bool eos = !ids.empty() && ids.back() == kEosId;
    return ServiceResponse{200,
                           {{"generated", tokens},
                            {"generated_ids", ids},
                            {"terminated_by_eos", eos},
                            {"context", ctx.tokens},
                            {"warnings", ctx.warnings},
                            {"model_info", model_info()}}};
  });
}

ServiceResponse InferenceService::score(std::string_view body) const {
  return guarded([&] {
    const json j = parse_request(body, {"sentence", "text"});
    const auto words = read_tokens(j, "sentence");
    if (words.empty()) reject("EmptySentence", "sentence must contain at least one token");
    Context ctx = resolve(words);
    ctx.ids.push_back(kEosId);
    const auto log_probs = score_sentence(*model_, ctx.ids);
    double total = 0.0;
    for (double lp : log_probs) total += lp;
    json tokens = ctx.tokens;
    tokens.push_back(vocab_.token(kEosId));
    return ServiceResponse{200,
                           {{"tokens", tokens},
                            {"per_token_log_prob", log_probs},
                            {"total_log_prob", total},
                            {"perplexity", std::exp(-total / static_cast<double>(log_probs.size()))},
                            {"warnings", ctx.warnings},
                            {"model_info", model_info()}}};
  });
}

ServiceResponse InferenceService::vocab(std::string_view prefix, std::optional<std::string_view> limit_text) const {
  return guarded([&] {
    std::size_t limit = 100;
    if (limit_text) {
      const auto [end, ec] = std::from_chars(limit_text->data(), limit_text->data() + limit_text->size(), limit);
      if (ec != std::errc() || end != limit_text->data() + limit_text->size() || limit < 1 || limit > kMaxVocabLimit)
        reject("InvalidField", "limit must be an integer between 1 and " + std::to_string(kMaxVocabLimit),
               {{"field", "limit"}});
    }
    json tokens = json::array();
    std::size_t matches = 0;
    const auto& all = vocab_.tokens();
    for (std::size_t id = 0; id < all.size(); ++id) {
      if (all[id].compare(0, prefix.size(), prefix) != 0) continue;
      if (matches++ < limit) tokens.push_back({{"id", id}, {"token", all[id]}});
    }
    return ServiceResponse{200,
                           {{"prefix", std::string(prefix)},
                            {"size", vocab_.size()},
                            {"matches", matches},
                            {"truncated", matches > limit},
                            {"tokens", tokens}}};
  });
}

ServiceResponse InferenceService::info() const {
  const ModelDims& d = model_->dims();
  return {200,
          {{"architecture", architecture_name(model_->architecture())},
           {"dims",
            {{"vocab_size", d.vocab_size},
             {"embed_size", d.embed_size},
             {"hidden_size", d.hidden_size},
             {"context_order", d.context_order}}},
           {"vocab_size", vocab_.size()},
           {"parameter_count", model_->parameter_count()},
           {"config", config_},
           {"checkpoint", source_},
           {"special_tokens",
            {{"pad", vocab_.token(kPadId)},
             {"bos", vocab_.token(kBosId)},
             {"eos", vocab_.token(kEosId)},
             {"unk", vocab_.token(kUnkId)}}}}};
}

HttpServer::HttpServer(ServerOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto send = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  // Wraps a handler so it answers 503 until the model is installed.
  auto when_ready = [this, send](auto fn) {
    return [this, send, fn](const httplib::Request& req, httplib::Response& res) {
      const InferenceService* svc = service_.load(std::memory_order_acquire);
      if (!svc) {
        send(res, error_response(503, "NotReady", "checkpoint is still loading"));
        return;
      }
      send(res, fn(*svc, req));
    };
  };

  server_->Post("/v1/predict", when_ready([](const InferenceService& s, const httplib::Request& req) {
                  return s.predict(req.body);
                }));
  server_->Post("/v1/complete", when_ready([](const InferenceService& s, const httplib::Request& req) {
                  return s.complete(req.body);
                }));
  server_->Post("/v1/score", when_ready([](const InferenceService& s, const httplib::Request& req) {
                  return s.score(req.body);
                }));
  server_->Get("/v1/vocab", when_ready([](const InferenceService& s, const httplib::Request& req) {
                 std::optional<std::string_view> limit;
                 std::string limit_text;
                 if (req.has_param("limit")) {
                   limit_text = req.get_param_value("limit");
                   limit = limit_text;
                 }
                 return s.vocab(req.get_param_value("prefix"), limit);
               }));
  server_->Get("/v1/info", when_ready([](const InferenceService& s, const httplib::Request&) { return s.info(); }));
  server_->Get("/healthz", when_ready([](const InferenceService&, const httplib::Request&) {
                 return ServiceResponse{200, {{"status", "ok"}}};
               }));

  if (!options_.ui_root.empty()) {
    server_->set_mount_point("/ui", options_.ui_root.string());
    server_->Get("/ui", [](const httplib::Request&, httplib::Response& res) { res.set_redirect("/ui/"); });
  }
  server_->set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unexpected failure";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_response(500, "InternalError", what));
  });
  server_->set_error_handler([send](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty())
      send(res, error_response(404, "NotFound", "no route for " + req.method + " " + req.path));
  });
}

int HttpServer::bind() {
  int port = options_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(options_.host);
  } else if (!server_->bind_to_port(options_.host, port)) {
    port = -1;
  }
  if (port < 0)
    throw Error(ErrorCode::kIoError, "cannot bind " + options_.host + ":" + std::to_string(options_.port));
  options_.port = port;
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

void HttpServer::set_service(std::unique_ptr<InferenceService> service) {
  if (owned_) throw Error(ErrorCode::kInvalidArgument, "service already installed");
  owned_ = std::move(service);
  service_.store(owned_.get(), std::memory_order_release);
}

std::pair<std::string, int> parse_address(std::string_view addr) {
  const std::size_t colon = addr.rfind(':');
  if (colon == std::string_view::npos)
    throw Error(ErrorCode::kInvalidArgument, "address must be HOST:PORT, got '" + std::string(addr) + "'");
  std::string host(addr.substr(0, colon));
  if (host.empty()) host = "127.0.0.1";
  const std::string_view port_text = addr.substr(colon + 1);
  int port = -1;
  const auto [end, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || end != port_text.data() + port_text.size() || port < 0 || port > 65535)
    throw Error(ErrorCode::kInvalidArgument, "bad port in '" + std::string(addr) + "'");
  return {host, port};
}

}  // namespace hierolm
