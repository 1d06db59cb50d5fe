#pragma once

#include <chrono>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ce/common.hpp"
#include "ce/gateway.hpp"

namespace ce {

// One JSON-over-HTTP provider endpoint, described as data: any completion or
// embedding service reachable this way can be targeted without rebuilds.
struct ProviderAdapter {
  std::string name;
  std::string endpoint;       // http://host[:port]/path
  std::string model_id;
  std::string body_template;  // {{prompt}} / {{texts}} / {{model}} / {{temperature}} / {{max_tokens}}
  std::string response_path;  // dot path to the completion text or embedding array
  std::string auth_header;    // header name; empty = unauthenticated
  std::string auth_env;       // environment variable holding the secret
  int max_attempts = 3;
  int backoff_ms = 200;       // doubled per retry
  int timeout_seconds = 60;
};

namespace detail {

struct ParsedUrl {
  std::string host;
  int port = 80;
  std::string path = "/";
};

inline ParsedUrl parse_url(const std::string& url) {
  std::string rest = url;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  ParsedUrl out;
  std::size_t slash = rest.find('/');
  std::string authority = slash == std::string::npos ? rest : rest.substr(0, slash);
  if (slash != std::string::npos) out.path = rest.substr(slash);
  std::size_t colon = authority.find(':');
  if (colon == std::string::npos) {
    out.host = authority;
  } else {
    out.host = authority.substr(0, colon);
    out.port = std::stoi(authority.substr(colon + 1));
  }
  return out;
}

// Walks a.b.0.c style paths through a JSON document.
inline const nlohmann::json* walk_path(const nlohmann::json& j, const std::string& path) {
  const nlohmann::json* cur = &j;
  std::size_t start = 0;
  while (start < path.size()) {
    std::size_t dot = path.find('.', start);
    std::string seg = path.substr(start, dot == std::string::npos ? std::string::npos
                                                                  : dot - start);
    start = dot == std::string::npos ? path.size() : dot + 1;
    if (seg.empty()) continue;
    if (cur->is_array()) {
      std::size_t idx = static_cast<std::size_t>(std::stoul(seg));
      if (idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else if (cur->is_object() && cur->contains(seg)) {
      cur = &(*cur)[seg];
    } else {
      return nullptr;
    }
  }
  return cur;
}

}  // namespace detail

// HTTP gateway over three role adapters with retries, backoff, and the base
// class's caching and journaling.
class HttpGateway : public Gateway {
 public:
  HttpGateway(ProviderAdapter score, ProviderAdapter optimize, ProviderAdapter embed)
      : score_(std::move(score)), optimize_(std::move(optimize)), embed_(std::move(embed)) {}

  std::string name() const override {
    return score_.name + "+" + optimize_.name + "+" + embed_.name;
  }

  std::string model_for(LlmRole role) const override { return adapter(role).model_id; }

 protected:
  std::string do_complete(const LlmRequest& req) override {
    const ProviderAdapter& a = adapter(req.role);
    std::string body = render_body(a, req.prompt, {}, req.decode);
    nlohmann::json response = post_with_retries(a, body);
    const nlohmann::json* node = detail::walk_path(response, a.response_path);
    if (node == nullptr || !node->is_string()) {
      throw ProviderError("adapter " + a.name + ": response path \"" + a.response_path +
                          "\" did not resolve to a string");
    }
    return node->get<std::string>();
  }

  std::vector<std::vector<double>> do_embed(const std::vector<std::string>& texts) override {
    const ProviderAdapter& a = adapter(LlmRole::Embed);
    std::string body = render_body(a, "", texts, {});
    nlohmann::json response = post_with_retries(a, body);
    const nlohmann::json* node = detail::walk_path(response, a.response_path);
    if (node == nullptr || !node->is_array()) {
      throw ProviderError("adapter " + a.name + ": response path \"" + a.response_path +
                          "\" did not resolve to an array");
    }
    return node->get<std::vector<std::vector<double>>>();
  }

 private:
  const ProviderAdapter& adapter(LlmRole role) const {
    switch (role) {
      case LlmRole::Score:
        return score_;
      case LlmRole::Optimize:
        return optimize_;
      case LlmRole::Embed:
        return embed_;
    }
    return score_;
  }

  static std::string render_body(const ProviderAdapter& a, const std::string& prompt,
                                 const std::vector<std::string>& texts, DecodeParams decode) {
    std::string body = a.body_template;
    auto replace_all = [&body](const std::string& key, const std::string& value) {
      std::size_t pos = 0;
      while ((pos = body.find(key, pos)) != std::string::npos) {
        body.replace(pos, key.size(), value);
        pos += value.size();
      }
    };
    replace_all("{{prompt}}", nlohmann::json(prompt).dump());
    replace_all("{{model}}", nlohmann::json(a.model_id).dump());
    replace_all("{{texts}}", nlohmann::json(texts).dump());
    replace_all("{{temperature}}", std::to_string(decode.temperature));
    replace_all("{{max_tokens}}", std::to_string(decode.max_tokens));
    return body;
  }

  nlohmann::json post_with_retries(const ProviderAdapter& a, const std::string& body) {
    detail::ParsedUrl url = detail::parse_url(a.endpoint);
    httplib::Headers headers;
    if (!a.auth_header.empty()) {
      const char* secret = a.auth_env.empty() ? nullptr : std::getenv(a.auth_env.c_str());
      if (secret == nullptr) {
        throw AuthError("adapter " + a.name + ": environment variable " + a.auth_env +
                        " is not set");
      }
      headers.emplace(a.auth_header, secret);
    }

    int backoff = a.backoff_ms;
    std::string last_error;
    for (int attempt = 1; attempt <= std::max(a.max_attempts, 1); ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
      }
      httplib::Client client(url.host, url.port);
      client.set_connection_timeout(a.timeout_seconds, 0);
      client.set_read_timeout(a.timeout_seconds, 0);
      auto res = client.Post(url.path, headers, body, "application/json");
      if (!res) {
        last_error = "network error (" + httplib::to_string(res.error()) + ")";
        continue;  // transient
      }
      if (res->status == 401 || res->status == 403) {
        throw AuthError("adapter " + a.name + ": HTTP " + std::to_string(res->status));
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;  // transient
      }
      if (res->status != 200) {
        throw ProviderError("adapter " + a.name + ": HTTP " + std::to_string(res->status));
      }
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) {
        throw ProviderError("adapter " + a.name + ": response is not valid JSON");
      }
      return j;
    }
    throw ProviderError("adapter " + a.name + ": retries exhausted, last error: " + last_error);
  }

  ProviderAdapter score_;
  ProviderAdapter optimize_;
  ProviderAdapter embed_;
};

}  // namespace ce
