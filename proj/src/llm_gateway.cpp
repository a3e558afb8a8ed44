#include "coe/llm_gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "coe/error.hpp"
#include "httplib.h"

namespace coe {

namespace fs = std::filesystem;

std::string to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

void ChatRequest::validate() const {
  if (messages.empty()) throw GatewayError("request has no messages");
  for (const auto& m : messages) {
    if (m.parts.empty()) throw GatewayError("message with no parts");
    for (const auto& p : m.parts) {
      if (std::holds_alternative<ImagePart>(p) && m.role != Role::User)
        throw GatewayError("image payloads are only allowed in user messages");
    }
  }
}

std::string ChatRequest::all_text() const {
  std::string out;
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        if (!out.empty()) out += "\n\n";
        out += t->text;
      }
    }
  }
  return out;
}

std::vector<const ImagePart*> ChatRequest::images() const {
  std::vector<const ImagePart*> out;
  for (const auto& m : messages)
    for (const auto& p : m.parts)
      if (const auto* img = std::get_if<ImagePart>(&p)) out.push_back(img);
  return out;
}

ChatRequest make_request(std::string model_tag, double temperature, std::string text, std::vector<ImagePart> images) {
  Message msg;
  msg.role = Role::User;
  msg.parts.emplace_back(TextPart{std::move(text)});
  for (auto& img : images) msg.parts.emplace_back(std::move(img));
  ChatRequest req;
  req.messages.push_back(std::move(msg));
  req.model_tag = std::move(model_tag);
  req.temperature = temperature;
  return req;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string media_type_for(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "application/octet-stream";
}

std::string cache_key(const std::string& backend_id, const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json parts = json::array();
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        parts.push_back({{"type", "text"}, {"text", t->text}});
      } else {
        const auto& img = std::get<ImagePart>(p);
        parts.push_back({{"type", "image"}, {"media_type", img.media_type}, {"sha256", sha256_hex(img.bytes)}});
      }
    }
    messages.push_back({{"role", to_string(m.role)}, {"parts", std::move(parts)}});
  }
  json doc = {{"backend_id", backend_id},
              {"model_tag", request.model_tag},
              {"temperature", request.temperature},
              {"messages", std::move(messages)}};
  return sha256_hex(canonical_dump(doc));
}

// ---- cache ----------------------------------------------------------------

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path ResponseCache::record_path(const std::string& key) const { return dir_ / (key + ".rec"); }

std::string ResponseCache::encode_record(const json& record) {
  auto payload = canonical_dump(record);
  return std::to_string(payload.size()) + "\n" + payload;
}

json ResponseCache::decode_record(std::string_view bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string_view::npos || nl == 0) throw ParseError("cache record without length prefix");
  std::size_t len = 0;
  for (std::size_t i = 0; i < nl; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(bytes[i]))) throw ParseError("bad cache record length");
    len = len * 10 + static_cast<std::size_t>(bytes[i] - '0');
  }
  if (bytes.size() - nl - 1 != len) throw ParseError("truncated cache record");
  auto parsed = json::parse(bytes.substr(nl + 1), nullptr, false);
  if (parsed.is_discarded()) throw ParseError("corrupt cache record");
  return parsed;
}

std::optional<json> ResponseCache::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto path = record_path(key);
  if (!fs::is_regular_file(path)) return std::nullopt;
  return decode_record(read_file_bytes(path));
}

void ResponseCache::put(const std::string& key, const json& record) {
  std::lock_guard lock(mu_);
  auto path = record_path(key);
  if (fs::exists(path)) return;
  write_file_atomic(path, encode_record(record));
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir_))
    if (e.path().extension() == ".rec") ++n;
  return n;
}

// ---- transport ------------------------------------------------------------

HttpResponse HttplibTransport::post(const std::string& url, const std::string& body, const HttpHeaders& headers) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw TransportError("bad URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers hdrs;
  for (const auto& [k, v] : headers) hdrs.emplace(k, v);
  auto res = client.Post(path, hdrs, body, "application/json");
  if (!res) throw TransportError("POST " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

HttpResponse post_with_retry(Transport& transport, const std::string& url, const std::string& body,
                             const HttpHeaders& headers, const RetryPolicy& retry) {
  auto backoff = retry.initial_backoff;
  std::string last_error;
  bool rate_limited = false;
  for (int attempt = 0; attempt < std::max(1, retry.max_attempts); ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    HttpResponse res;
    try {
      res = transport.post(url, body, headers);
    } catch (const TransportError& e) {
      last_error = e.what();
      rate_limited = false;
      spdlog::warn("{}: attempt {} failed ({})", url, attempt + 1, last_error);
      continue;
    }
    if (res.status >= 200 && res.status < 300) return res;
    // Other 4xx responses will not improve on retry.
    if (res.status != 429 && res.status < 500)
      throw TransportError(url + ": HTTP " + std::to_string(res.status) + ": " + res.body);
    rate_limited = res.status == 429;
    last_error = "HTTP " + std::to_string(res.status);
    spdlog::warn("{}: attempt {} failed ({})", url, attempt + 1, last_error);
  }
  if (rate_limited) throw GatewayError("rate-limit exhaustion: " + url);
  throw TransportError("transport failure after retries: " + last_error);
}

// ---- remote backend -------------------------------------------------------

RemoteBackend::RemoteBackend(RemoteConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {}

json RemoteBackend::wire_body(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json content = json::array();
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<TextPart>(&p)) {
        content.push_back({{"type", "text"}, {"text", t->text}});
      } else {
        const auto& img = std::get<ImagePart>(p);
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:" + img.media_type + ";base64," + base64_encode(img.bytes)}}}});
      }
    }
    messages.push_back({{"role", to_string(m.role)}, {"content", std::move(content)}});
  }
  return {{"model", request.model_tag},
          {"temperature", request.temperature},
          {"max_tokens", request.max_output},
          {"messages", std::move(messages)}};
}

std::string RemoteBackend::parse_wire_response(const std::string& body) {
  auto doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw ParseError("response body is not JSON");
  std::string text;
  if (doc.contains("choices") && !doc["choices"].empty()) {
    const auto& content = doc["choices"][0]["message"]["content"];
    if (content.is_string()) {
      text = content.get<std::string>();
    } else if (content.is_array()) {
      for (const auto& part : content)
        if (part.contains("text")) text += part["text"].get<std::string>();
    }
  } else if (doc.contains("text") && doc["text"].is_string()) {
    text = doc["text"].get<std::string>();
  }
  if (text.empty()) throw ParseError("response carries no text");
  return text;
}

std::string RemoteBackend::complete(const ChatRequest& request) {
  if (config_.base_url.empty()) throw GatewayError("remote backend '" + config_.backend_id + "' has no base_url");
  HttpHeaders headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  auto res = post_with_retry(*transport_, config_.base_url, wire_body(request).dump(), headers, config_.retry);
  return parse_wire_response(res.body);
}

// ---- gateway --------------------------------------------------------------

Gateway::Gateway(GatewayMode mode, std::string backend_id, std::shared_ptr<Backend> backend,
                 std::shared_ptr<ResponseCache> cache, std::size_t max_in_flight)
    : mode_(mode),
      backend_id_(std::move(backend_id)),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      in_flight_(std::make_unique<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, max_in_flight)))) {}

std::shared_ptr<Gateway> Gateway::remote(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache,
                                         std::size_t max_in_flight) {
  auto id = backend->id();
  return std::make_shared<Gateway>(GatewayMode::Remote, std::move(id), std::move(backend), std::move(cache),
                                   max_in_flight);
}

std::shared_ptr<Gateway> Gateway::replay(std::string backend_id, std::shared_ptr<ResponseCache> cache) {
  return std::make_shared<Gateway>(GatewayMode::Replay, std::move(backend_id), nullptr, std::move(cache), 1);
}

std::shared_ptr<Gateway> Gateway::mock(std::string backend_id, MockFn fn) {
  auto backend = std::make_shared<MockBackend>(backend_id, std::move(fn));
  return std::make_shared<Gateway>(GatewayMode::Mock, std::move(backend_id), std::move(backend), nullptr, 1);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  request.validate();
  if (mode_ == GatewayMode::Mock) {
    ++backend_calls_;
    auto text = backend_->complete(request);
    if (text.empty()) throw GatewayError("mock backend returned empty text");
    return {std::move(text), backend_id_, false};
  }

  const auto key = cache_key(backend_id_, request);
  if (cache_) {
    if (auto record = cache_->get(key)) {
      ++cache_hits_;
      return {record->at("response").get<std::string>(), backend_id_, true};
    }
  }
  if (mode_ == GatewayMode::Replay) throw ReplayMiss(key);

  std::string text;
  {
    in_flight_->acquire();
    struct Release {
      std::counting_semaphore<>* s;
      ~Release() { s->release(); }
    } release{in_flight_.get()};
    ++backend_calls_;
    text = backend_->complete(request);
  }
  if (text.empty()) throw GatewayError("backend returned empty text");
  if (cache_) {
    cache_->put(key, {{"key", key},
                      {"backend_id", backend_id_},
                      {"model_tag", request.model_tag},
                      {"temperature", request.temperature},
                      {"response", text}});
  }
  return {std::move(text), backend_id_, false};
}

}  // namespace coe
