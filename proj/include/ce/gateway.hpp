#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ce/common.hpp"

namespace ce {

struct ProviderError : Error {
  using Error::Error;
};
struct AuthError : Error {
  using Error::Error;
};
struct TimeoutError : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};

enum class LlmRole { Score, Optimize, Embed };

inline const char* role_name(LlmRole r) {
  switch (r) {
    case LlmRole::Score:
      return "score";
    case LlmRole::Optimize:
      return "optimize";
    case LlmRole::Embed:
      return "embed";
  }
  return "?";
}

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct LlmRequest {
  LlmRole role = LlmRole::Score;
  std::string model_id;
  std::string prompt;
  DecodeParams decode;
};

// score defaults to temperature 0, optimize to 0.7.
inline DecodeParams default_decode(LlmRole role) {
  DecodeParams d;
  d.temperature = (role == LlmRole::Optimize) ? 0.7 : 0.0;
  return d;
}

// On-disk embedding cache: JSONL records {"key": hex digest of
// (model_id, text), "vector": [float64...]}.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;

  explicit EmbeddingCache(std::filesystem::path file) { attach(std::move(file)); }

  // Point the cache at a backing file, loading any existing records.
  void attach(std::filesystem::path file) {
    std::lock_guard<std::mutex> lock(mu_);
    file_ = std::move(file);
    if (!file_.empty() && std::filesystem::exists(file_)) {
      std::ifstream in(file_);
      std::string line;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("key") || !j.contains("vector")) continue;
        entries_[j["key"].get<std::string>()] = j["vector"].get<std::vector<double>>();
      }
    }
  }

  static std::string key(const std::string& model_id, const std::string& text) {
    return hex64(fnv1a64(text, fnv1a64(model_id)));
  }

  std::optional<std::vector<double>> get(const std::string& k) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(k);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& k, const std::vector<double>& v) {
    std::lock_guard<std::mutex> lock(mu_);
    if (entries_.count(k)) return;
    entries_[k] = v;
    if (!file_.empty()) {
      std::ofstream out(file_, std::ios::app);
      nlohmann::json j;
      j["key"] = k;
      j["vector"] = v;
      out << j.dump() << "\n";
    }
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
  }

 private:
  std::filesystem::path file_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<double>> entries_;
};

// Newline-delimited journal of every gateway exchange. Deterministic mode
// writes ts 0 so mock transcripts are byte-identical across runs.
class TranscriptWriter {
 public:
  TranscriptWriter() = default;

  void attach(std::filesystem::path file, bool deterministic) {
    std::lock_guard<std::mutex> lock(mu_);
    file_ = std::move(file);
    deterministic_ = deterministic;
  }

  bool enabled() const { return !file_.empty(); }

  void record(const std::string& digest, LlmRole role, const std::string& prompt,
              const std::string& response) {
    if (file_.empty()) return;
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(file_, std::ios::app);
    nlohmann::json j;
    j["digest"] = digest;
    j["role"] = role_name(role);
    j["prompt"] = prompt;
    j["response"] = response;
    j["ts"] = deterministic_ ? 0
                             : std::chrono::duration_cast<std::chrono::seconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count();
    out << j.dump() << "\n";
  }

 private:
  std::filesystem::path file_;
  bool deterministic_ = false;
  std::mutex mu_;
};

// Simple requests-per-minute limiter with a max in-flight bound.
class RateLimiter {
 public:
  RateLimiter() = default;

  void configure(int max_per_minute, int max_in_flight) {
    std::lock_guard<std::mutex> lock(mu_);
    max_per_minute_ = max_per_minute;
    max_in_flight_ = max_in_flight;
  }

  struct Ticket {
    RateLimiter* limiter = nullptr;
    ~Ticket() {
      if (limiter) limiter->release();
    }
  };

  Ticket acquire() {
    if (max_per_minute_ <= 0 && max_in_flight_ <= 0) return {};
    std::unique_lock<std::mutex> lock(mu_);
    auto now = std::chrono::steady_clock::now();
    while (max_per_minute_ > 0) {
      while (!recent_.empty() && now - recent_.front() > std::chrono::minutes(1)) {
        recent_.pop_front();
      }
      if (static_cast<int>(recent_.size()) < max_per_minute_) break;
      lock.unlock();
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      lock.lock();
      now = std::chrono::steady_clock::now();
    }
    while (max_in_flight_ > 0 && in_flight_ >= max_in_flight_) {
      lock.unlock();
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      lock.lock();
    }
    recent_.push_back(now);
    ++in_flight_;
    return {this};
  }

 private:
  void release() {
    std::lock_guard<std::mutex> lock(mu_);
    --in_flight_;
  }

  int max_per_minute_ = 0;  // 0 = unlimited
  int max_in_flight_ = 0;   // 0 = unlimited
  int in_flight_ = 0;
  std::deque<std::chrono::steady_clock::time_point> recent_;
  std::mutex mu_;
};

// Uniform access to the three LLM roles. Subclasses implement the raw calls;
// this base owns caching, journaling, and rate limiting.
class Gateway {
 public:
  virtual ~Gateway() = default;

  virtual std::string name() const = 0;
  virtual std::string model_for(LlmRole role) const = 0;
  virtual bool deterministic() const { return false; }

  std::string embed_model_id() const { return model_for(LlmRole::Embed); }

  void set_transcript(std::filesystem::path file) {
    transcript_.attach(std::move(file), deterministic());
  }
  void set_embedding_cache_file(std::filesystem::path file) {
    embedding_cache_.attach(std::move(file));
  }
  void set_rate_limit(int max_per_minute, int max_in_flight) {
    limiter_.configure(max_per_minute, max_in_flight);
  }

  static std::string request_digest(const std::string& adapter, const LlmRequest& req) {
    std::uint64_t h = fnv1a64(adapter);
    h = fnv1a64(req.model_id, h);
    h = fnv1a64(role_name(req.role), h);
    h = fnv1a64(req.prompt, h);
    h = fnv1a64(std::to_string(req.decode.temperature), h);
    h = fnv1a64(std::to_string(req.decode.max_tokens), h);
    return hex64(h);
  }

  std::string complete(const LlmRequest& req) {
    const std::string digest = request_digest(name(), req);
    const bool cacheable = req.decode.temperature == 0.0;
    if (cacheable) {
      std::lock_guard<std::mutex> lock(completion_mu_);
      auto it = completion_cache_.find(digest);
      if (it != completion_cache_.end()) return it->second;
    }
    std::string response;
    {
      auto ticket = limiter_.acquire();
      response = do_complete(req);
    }
    transcript_.record(digest, req.role, req.prompt, response);
    if (cacheable) {
      std::lock_guard<std::mutex> lock(completion_mu_);
      completion_cache_.emplace(digest, response);
    }
    return response;
  }

  // Convenience: completion with the role's default decode parameters.
  std::string complete(LlmRole role, const std::string& prompt) {
    LlmRequest req;
    req.role = role;
    req.model_id = model_for(role);
    req.prompt = prompt;
    req.decode = default_decode(role);
    return complete(req);
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw EmptyInput("embed: no texts given");
    const std::string model = model_for(LlmRole::Embed);
    std::vector<std::vector<double>> out(texts.size());
    std::vector<std::size_t> missing;
    std::vector<std::string> missing_texts;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto hit = embedding_cache_.get(EmbeddingCache::key(model, texts[i]));
      if (hit) {
        out[i] = std::move(*hit);
      } else {
        missing.push_back(i);
        missing_texts.push_back(texts[i]);
      }
    }
    if (!missing.empty()) {
      std::vector<std::vector<double>> fresh;
      {
        auto ticket = limiter_.acquire();
        fresh = do_embed(missing_texts);
      }
      if (fresh.size() != missing.size()) {
        throw ProviderError("embed: provider returned " + std::to_string(fresh.size()) +
                            " vectors for " + std::to_string(missing.size()) + " texts");
      }
      for (std::size_t i = 0; i < missing.size(); ++i) {
        embedding_cache_.put(EmbeddingCache::key(model, missing_texts[i]), fresh[i]);
        out[missing[i]] = std::move(fresh[i]);
      }
    }
    return out;
  }

 protected:
  virtual std::string do_complete(const LlmRequest& req) = 0;
  virtual std::vector<std::vector<double>> do_embed(const std::vector<std::string>& texts) = 0;

 private:
  EmbeddingCache embedding_cache_;
  TranscriptWriter transcript_;
  RateLimiter limiter_;
  std::mutex completion_mu_;
  std::map<std::string, std::string> completion_cache_;
};

}  // namespace ce
