#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "coe/json_util.hpp"

namespace coe {

enum class Role { System, User, Assistant };
std::string to_string(Role r);

struct TextPart {
  std::string text;
};

struct ImagePart {
  std::string media_type;  // e.g. "image/png"
  std::string bytes;
};

using Part = std::variant<TextPart, ImagePart>;

struct Message {
  Role role = Role::User;
  std::vector<Part> parts;
};

struct ChatRequest {
  std::vector<Message> messages;
  std::string model_tag;
  double temperature = 0.0;
  int max_output = 1024;

  // Throws GatewayError when the request is structurally invalid.
  void validate() const;

  // Concatenation of all text parts, in order, joined by blank lines.
  std::string all_text() const;
  std::vector<const ImagePart*> images() const;
};

ChatRequest make_request(std::string model_tag, double temperature, std::string text,
                         std::vector<ImagePart> images = {});

struct ChatResponse {
  std::string text;
  std::string backend_id;
  bool cached = false;
};

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);
std::string media_type_for(const std::filesystem::path& p);

// Digest over (backend_id, model_tag, temperature, messages, image hashes).
// max_output is deliberately excluded.
std::string cache_key(const std::string& backend_id, const ChatRequest& request);

// Append-only directory of records, one file per digest. Each file holds a
// decimal byte length, a newline, then that many bytes of UTF-8 JSON.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<json> get(const std::string& key) const;
  // Existing records are never overwritten.
  void put(const std::string& key, const json& record);
  std::size_t size() const;
  const std::filesystem::path& dir() const { return dir_; }

  static std::string encode_record(const json& record);
  static json decode_record(std::string_view bytes);

 private:
  std::filesystem::path record_path(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  // Throws TransportError on connection-level failure.
  virtual HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) = 0;
};

class HttplibTransport : public Transport {
 public:
  explicit HttplibTransport(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}
  HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) override;

 private:
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
};

// POSTs `body` with exponential backoff on transport errors, 429 and 5xx.
HttpResponse post_with_retry(Transport& transport, const std::string& url, const std::string& body,
                             const HttpHeaders& headers, const RetryPolicy& retry);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct RemoteConfig {
  std::string backend_id = "remote";
  std::string base_url;  // full chat-completion endpoint URL
  std::string api_key_env = "COE_API_KEY";
  RetryPolicy retry;
};

// Vendor-neutral chat-completion client: message list in, one text out,
// images as inline base64 data URLs.
class RemoteBackend : public Backend {
 public:
  RemoteBackend(RemoteConfig config, std::shared_ptr<Transport> transport);
  std::string id() const override { return config_.backend_id; }
  std::string complete(const ChatRequest& request) override;

  static json wire_body(const ChatRequest& request);
  static std::string parse_wire_response(const std::string& body);

 private:
  RemoteConfig config_;
  std::shared_ptr<Transport> transport_;
};

using MockFn = std::function<std::string(const ChatRequest&)>;

class MockBackend : public Backend {
 public:
  MockBackend(std::string id, MockFn fn) : id_(std::move(id)), fn_(std::move(fn)) {}
  std::string id() const override { return id_; }
  std::string complete(const ChatRequest& request) override { return fn_(request); }

 private:
  std::string id_;
  MockFn fn_;
};

enum class GatewayMode { Remote, Replay, Mock };

struct GatewayStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
};

// Single access point for one model role. Safe for concurrent use.
class Gateway {
 public:
  static std::shared_ptr<Gateway> remote(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache,
                                         std::size_t max_in_flight = 4);
  static std::shared_ptr<Gateway> replay(std::string backend_id, std::shared_ptr<ResponseCache> cache);
  static std::shared_ptr<Gateway> mock(std::string backend_id, MockFn fn);

  ChatResponse complete(const ChatRequest& request);

  GatewayMode mode() const { return mode_; }
  const std::string& backend_id() const { return backend_id_; }
  GatewayStats stats() const { return {backend_calls_.load(), cache_hits_.load()}; }

  Gateway(GatewayMode mode, std::string backend_id, std::shared_ptr<Backend> backend,
          std::shared_ptr<ResponseCache> cache, std::size_t max_in_flight);

 private:
  GatewayMode mode_;
  std::string backend_id_;
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
  std::atomic<std::size_t> backend_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace coe
