#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hierolm/checkpoint.hpp"
#include "hierolm/model.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace hierolm {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

/// Error body shape shared by every endpoint.
ServiceResponse error_response(int status, std::string_view code, std::string_view message,
                               nlohmann::json details = nlohmann::json::object());

/// Request handling over one immutable model. All methods are const and safe
/// to call concurrently.
class InferenceService {
 public:
  static constexpr std::size_t kMaxSteps = 256;
  static constexpr std::size_t kMaxVocabLimit = 10000;

  InferenceService(const Checkpoint& ckpt, std::string source = {});

  ServiceResponse predict(std::string_view body) const;
  ServiceResponse complete(std::string_view body) const;
  ServiceResponse score(std::string_view body) const;
  ServiceResponse vocab(std::string_view prefix, std::optional<std::string_view> limit = std::nullopt) const;
  ServiceResponse info() const;

  const LanguageModel<float>& model() const { return *model_; }
  const Vocabulary& vocabulary() const { return vocab_; }

 private:
  struct Context {
    std::vector<TokenId> ids;  // BOS-prefixed
    std::vector<std::string> tokens;
    nlohmann::json warnings = nlohmann::json::array();
  };

  Context resolve(const std::vector<std::string>& tokens) const;
  nlohmann::json model_info() const;

  std::unique_ptr<LanguageModel<float>> model_;
  Vocabulary vocab_;
  nlohmann::json config_;
  std::string source_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path ui_root;  // served under /ui when it exists
};

/// HTTP front end. Endpoints answer 503 until a service is installed.
class HttpServer {
 public:
  explicit HttpServer(ServerOptions options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket and returns the port. Throws IoError.
  int bind();
  /// Blocks serving requests until stop(). Requires bind().
  void listen();
  void stop();

  /// Installs the loaded model; subsequent requests are served by it.
  void set_service(std::unique_ptr<InferenceService> service);
  bool ready() const noexcept { return service_.load(std::memory_order_acquire) != nullptr; }

 private:
  void install_routes();

  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<InferenceService> owned_;
  std::atomic<const InferenceService*> service_{nullptr};
};

/// Parses "HOST:PORT" or ":PORT". Throws InvalidArgument.
std::pair<std::string, int> parse_address(std::string_view addr);

}  // namespace hierolm
