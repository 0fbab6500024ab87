#pragma once
// Network backends: an OpenAI-compatible chat completion client and a JSON
// RPC client for a vision-language encoder service. https endpoints need
// CPPHTTPLIB_OPENSSL_SUPPORT defined before this header and OpenSSL linked.
//
// Encoder service endpoints (all JSON):
//   GET  /info          -> {"dim", "token_dim"}
//   POST /tokenize      {"text"} -> {"tokens": [[...], ...]}
//   POST /encode        {"tokens", "num_learnable"} -> {"embedding": [...]}
//   POST /backward      {"tokens", "num_learnable", "grad_output"} -> {"grad": [[...], ...]}
//   POST /encode_image  {"id", "image_b64"} -> {"embedding": [...]}

#include "cocobm/encoders.hpp"
#include "cocobm/llm.hpp"

#include <httplib.h>

#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace cocobm {

struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port]
  int timeout_seconds = 120;
};

inline void from_json(const json& j, HttpEndpoint& e) {
  e.base_url = j.at("base_url").get<std::string>();
  e.timeout_seconds = j.value("timeout_seconds", e.timeout_seconds);
}

inline std::unique_ptr<httplib::Client> make_http_client(const HttpEndpoint& ep) {
  if (ep.base_url.empty()) throw Error("HTTP backend: base URL is empty");
  auto cli = std::make_unique<httplib::Client>(ep.base_url);
  if (!cli->is_valid()) throw Error("HTTP backend: cannot use URL '" + ep.base_url + "' (https needs an OpenSSL build)");
  cli->set_connection_timeout(ep.timeout_seconds, 0);
  cli->set_read_timeout(ep.timeout_seconds, 0);
  cli->set_write_timeout(ep.timeout_seconds, 0);
  return cli;
}

inline json http_json(httplib::Client& cli, const std::string& base, const std::string& method, const std::string& path,
                      const json* body = nullptr, const httplib::Headers& headers = {}) {
  auto res = method == "GET" ? cli.Get(path, headers) : cli.Post(path, headers, body ? body->dump() : "{}", "application/json");
  if (!res) throw Error("HTTP " + method + " " + base + path + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw Error("HTTP " + method + " " + base + path + " returned " + std::to_string(res->status) + ": " +
                res->body.substr(0, 300));
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error("HTTP " + method + " " + base + path + " returned invalid JSON: " + e.what());
  }
}

struct ChatConfig {
  HttpEndpoint endpoint{"https://api.openai.com", 120};
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "COCOBM_API_KEY";
  int max_tokens = 512;
};

inline void from_json(const json& j, ChatConfig& c) {
  c.endpoint.base_url = j.value("base_url", c.endpoint.base_url);
  c.endpoint.timeout_seconds = j.value("timeout_seconds", c.endpoint.timeout_seconds);
  c.path = j.value("path", c.path);
  c.model = j.at("model").get<std::string>();
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
}

inline void to_json(json& j, const ChatConfig& c) {
  j = json{{"base_url", c.endpoint.base_url}, {"timeout_seconds", c.endpoint.timeout_seconds},
           {"path", c.path},                  {"model", c.model},
           {"api_key_env", c.api_key_env},    {"max_tokens", c.max_tokens}};
}

// One user message per request; the reply's first choice is the response.
class ChatLlm final : public LlmClient {
 public:
  explicit ChatLlm(ChatConfig cfg) : cfg_(std::move(cfg)), cli_(make_http_client(cfg_.endpoint)) {
    if (cfg_.model.empty()) throw Error("chat backend: model name is empty");
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (!key || !*key) throw Error("chat backend: environment variable " + cfg_.api_key_env + " is not set");
      key_ = key;
    }
  }

  std::string complete(const LlmRequest& request) override {
    json body = {{"model", cfg_.model},
                 {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
                 {"temperature", request.temperature},
                 {"max_tokens", cfg_.max_tokens}};
    httplib::Headers headers;
    if (!key_.empty()) headers.emplace("Authorization", "Bearer " + key_);
    std::lock_guard lock(mu_);
    json reply = http_json(*cli_, cfg_.endpoint.base_url, "POST", cfg_.path, &body, headers);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw Error("chat backend: reply has no choices[0].message.content: " + reply.dump().substr(0, 300));
    }
  }

 private:
  ChatConfig cfg_;
  std::unique_ptr<httplib::Client> cli_;
  std::string key_;
  std::mutex mu_;
};

inline json tokens_to_json(const TokenSequence& seq) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < seq.embeddings.rows(); ++r)
    rows.push_back(std::vector<double>(seq.embeddings.row(r).data(), seq.embeddings.row(r).data() + seq.embeddings.cols()));
  return rows;
}

inline Matrix rows_from_json(const json& j, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.empty()) throw Error("encoder service: '" + what + "' must be a non-empty array of rows");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols)
      throw Error("encoder service: '" + what + "' row has " + std::to_string(row.size()) + " entries, expected " +
                  std::to_string(cols));
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return m;
}

inline Vector vector_from_reply(const json& j, std::size_t dim, const std::string& what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != dim)
    throw Error("encoder service: '" + what + "' has " + std::to_string(v.size()) + " entries, expected " +
                std::to_string(dim));
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

class HttpTextEncoder final : public TextEncoder {
 public:
  explicit HttpTextEncoder(HttpEndpoint ep) : ep_(std::move(ep)), cli_(make_http_client(ep_)) {
    json info = call("GET", "/info", nullptr);
    dim_ = info.at("dim").get<std::size_t>();
    token_dim_ = info.at("token_dim").get<std::size_t>();
    if (dim_ == 0 || token_dim_ == 0) throw Error("encoder service reported a zero dimension");
  }

  std::size_t dim() const override { return dim_; }
  std::size_t token_dim() const override { return token_dim_; }

  TokenSequence tokenize(std::string_view text) const override {
    if (trim(text).empty()) throw Error("tokenize: text must be non-empty");
    std::string key(text);
    {
      std::lock_guard lock(cache_mu_);
      if (auto it = tokens_.find(key); it != tokens_.end()) return it->second;
    }
    json body = {{"text", key}};
    TokenSequence seq;
    seq.embeddings = rows_from_json(call("POST", "/tokenize", &body).at("tokens"), token_dim_, "tokens");
    seq.kinds.assign(static_cast<std::size_t>(seq.embeddings.rows()), TokenKind::fixed);
    std::lock_guard lock(cache_mu_);
    tokens_.emplace(key, seq);
    return seq;
  }

  Vector encode(const TokenSequence& seq) const override {
    json body = request_body(seq);
    Vector v = vector_from_reply(call("POST", "/encode", &body).at("embedding"), dim_, "embedding");
    return normalized(v);
  }

  Matrix backward(const TokenSequence& seq, const Vector& grad_output) const override {
    if (static_cast<std::size_t>(grad_output.size()) != dim_) throw Error("backward: gradient has the wrong dimension");
    json body = request_body(seq);
    body["grad_output"] = std::vector<double>(grad_output.data(), grad_output.data() + grad_output.size());
    Matrix g = rows_from_json(call("POST", "/backward", &body).at("grad"), token_dim_, "grad");
    if (g.rows() != seq.embeddings.rows()) throw Error("backward: encoder service returned the wrong number of rows");
    return g;
  }

 private:
  json request_body(const TokenSequence& seq) const {
    seq.validate();
    if (static_cast<std::size_t>(seq.embeddings.cols()) != token_dim_)
      throw Error("token sequence width does not match the encoder service");
    return json{{"tokens", tokens_to_json(seq)}, {"num_learnable", seq.num_learnable()}};
  }

  json call(const std::string& method, const std::string& path, const json* body) const {
    std::lock_guard lock(http_mu_);
    return http_json(*cli_, ep_.base_url, method, path, body);
  }

  HttpEndpoint ep_;
  std::unique_ptr<httplib::Client> cli_;
  std::size_t dim_ = 0, token_dim_ = 0;
  mutable std::mutex http_mu_;
  mutable std::mutex cache_mu_;
  mutable std::map<std::string, TokenSequence> tokens_;
};

class HttpImageEncoder final : public ImageEncoder {
 public:
  HttpImageEncoder(HttpEndpoint ep, std::size_t dim) : ep_(std::move(ep)), cli_(make_http_client(ep_)), dim_(dim) {}

  std::size_t dim() const override { return dim_; }

  Vector encode(const ImageRef& image) const override {
    std::string bytes;
    try {
      bytes = read_bytes(image.path);
    } catch (const Error&) {
      throw Error("cannot read image " + image.path.string());
    }
    json body = {{"id", image.id}, {"image_b64", httplib::detail::base64_encode(bytes)}};
    std::lock_guard lock(mu_);
    Vector v = vector_from_reply(http_json(*cli_, ep_.base_url, "POST", "/encode_image", &body).at("embedding"), dim_,
                                 "embedding");
    if (!v.allFinite() || v.norm() == 0.0) throw Error("encoder service returned a degenerate embedding for " + image.id);
    return normalized(v);
  }

 private:
  static std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("unreadable");
    return std::string(std::istreambuf_iterator<char>(in), {});
  }

  HttpEndpoint ep_;
  std::unique_ptr<httplib::Client> cli_;
  std::size_t dim_;
  mutable std::mutex mu_;
};

}  // namespace cocobm
