#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dualfocus/backend.hpp"
#include "dualfocus/image.hpp"

namespace dualfocus {

struct RemoteConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "default";
  double timeout_s = 120.0;
  int max_inflight = 8;
  int max_retries = 3;
  double backoff_initial_s = 0.5;
};

/// Environment variable that overrides RemoteConfig::base_url.
inline constexpr const char* kBackendUrlEnv = "DF_BACKEND_URL";

/// Builds the OpenAI-compatible chat-completions message array. Images are
/// sent as base64 PNG data URLs ahead of the text within each user turn.
inline nlohmann::json chat_messages_json(const PromptContext& ctx) {
  auto messages = nlohmann::json::array();
  for (const auto& turn : ctx.turns()) {
    if (turn.role == Role::Assistant) {
      std::string text;
      for (const auto& s : turn.segments) text += s.text_value();
      messages.push_back({{"role", "assistant"}, {"content", text}});
      continue;
    }
    auto parts = nlohmann::json::array();
    for (const auto& s : turn.segments) {
      if (s.is_image()) {
        parts.push_back({{"type", "image_url"},
                         {"image_url", {{"url", data_url(encode_wire(*s.image_value()))}}}});
      } else {
        parts.push_back({{"type", "text"}, {"text", s.text_value()}});
      }
    }
    messages.push_back({{"role", "user"}, {"content", parts}});
  }
  return messages;
}

namespace detail {

// Accepts both the chat ("content": [{token, logprob}]) and the legacy
// completions ("tokens" + "token_logprobs") logprob layouts.
inline std::optional<std::vector<TokenLogprob>> parse_logprobs(const nlohmann::json& choice) {
  if (!choice.contains("logprobs") || choice["logprobs"].is_null()) return std::nullopt;
  const auto& lp = choice["logprobs"];
  std::vector<TokenLogprob> out;
  if (lp.contains("content") && lp["content"].is_array()) {
    for (const auto& t : lp["content"]) {
      out.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
    }
    return out;
  }
  if (lp.contains("tokens") && lp.contains("token_logprobs")) {
    const auto& toks = lp["tokens"];
    const auto& lps = lp["token_logprobs"];
    for (std::size_t i = 0; i < toks.size() && i < lps.size(); ++i) {
      if (lps[i].is_null()) continue;
      out.push_back({toks[i].get<std::string>(), lps[i].get<double>()});
    }
    return out;
  }
  return std::nullopt;
}

struct SplitUrl {
  std::string host;  // scheme://host[:port]
  std::string path_prefix;
};

inline SplitUrl split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    throw Error(ErrorCode::ConfigError, "backend url must start with http://, got '" + url + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  SplitUrl out{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

}  // namespace detail

/// Chat-completions client for OpenAI-compatible inference servers.
///
/// Requests are greedy (temperature 0) and ask for token logprobs. Transport
/// failures, 429 and 5xx responses are retried with exponential backoff;
/// retry state is local to each call. A counting semaphore caps in-flight
/// requests across threads.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig config)
      : config_(std::move(config)),
        url_(detail::split_base_url(config_.base_url)),
        inflight_(std::make_unique<std::counting_semaphore<1024>>(
            std::clamp(config_.max_inflight, 1, 1024))) {}

  GenerationResult generate(const PromptContext& ctx, const GenerationParams& params) const override {
    nlohmann::json body = {{"model", config_.model},
                           {"messages", chat_messages_json(ctx)},
                           {"max_tokens", params.max_tokens},
                           {"temperature", params.temperature},
                           {"logprobs", true}};
    const auto response = post(body);
    const auto& choice = first_choice(response);
    GenerationResult r;
    const auto& message = choice.value("message", nlohmann::json::object());
    if (message.contains("content") && message["content"].is_string()) {
      r.text = message["content"].get<std::string>();
    } else if (choice.contains("text")) {
      r.text = choice["text"].get<std::string>();
    }
    r.finish_reason = finish_reason_from_string(
        choice.contains("finish_reason") && choice["finish_reason"].is_string()
            ? choice["finish_reason"].get<std::string>()
            : std::string("stop"));
    auto tokens = detail::parse_logprobs(choice);
    if (!tokens) {
      throw Error(ErrorCode::ResponseMissingLogprobs, "server response carries no logprobs");
    }
    r.tokens = std::move(*tokens);
    validate_logprobs(r.tokens);
    return r;
  }

  /// Echo-scores the forced answer by sending it as the final assistant turn
  /// with "echo": true. Servers that reject the request or do not echo the
  /// answer tokens raise UnsupportedByServer.
  std::vector<TokenLogprob> score(const PromptContext& ctx, std::string_view forced_answer) const override {
    if (forced_answer.empty()) {
      throw Error(ErrorCode::InvalidArgument, "forced answer must be nonempty");
    }
    auto messages = chat_messages_json(ctx);
    messages.push_back({{"role", "assistant"}, {"content", std::string(forced_answer)}});
    nlohmann::json body = {{"model", config_.model}, {"messages", messages},
                           {"max_tokens", 1},        {"temperature", 0.0},
                           {"logprobs", true},       {"echo", true}};
    nlohmann::json response;
    try {
      response = post(body);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidArgument) {
        throw Error(ErrorCode::UnsupportedByServer, e.what());
      }
      throw;
    }
    const auto tokens = detail::parse_logprobs(first_choice(response));
    if (!tokens) throw Error(ErrorCode::UnsupportedByServer, "echo response carries no logprobs");
    std::string joined;
    std::vector<TokenLogprob> out;
    for (const auto& t : *tokens) {
      joined += t.token_text;
      out.push_back(t);
      if (trim(joined) == trim(forced_answer)) {
        validate_logprobs(out);
        return out;
      }
    }
    throw Error(ErrorCode::UnsupportedByServer, "server did not echo the forced answer tokens");
  }

  std::string id() const override { return "remote:" + config_.model + "@" + config_.base_url; }

  TokenJoin join_convention() const override { return TokenJoin::Opaque; }

  void probe() const override {
    auto client = make_client();
    auto res = client->Get(url_.path_prefix + "/v1/models");
    if (!res) {
      throw Error(ErrorCode::BackendUnavailable,
                  config_.base_url + " unreachable: " + httplib::to_string(res.error()));
    }
  }

  const RemoteConfig& config() const noexcept { return config_; }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  static const nlohmann::json& first_choice(const nlohmann::json& response) {
    if (!response.contains("choices") || !response["choices"].is_array() ||
        response["choices"].empty()) {
      throw Error(ErrorCode::BackendUnavailable, "response has no choices");
    }
    return response["choices"][0];
  }

  std::unique_ptr<httplib::Client> make_client() const {
    auto client = std::make_unique<httplib::Client>(url_.host);
    const auto secs = static_cast<time_t>(config_.timeout_s);
    const auto usecs = static_cast<time_t>((config_.timeout_s - secs) * 1e6);
    client->set_connection_timeout(secs, usecs);
    client->set_read_timeout(secs, usecs);
    client->set_write_timeout(secs, usecs);
    return client;
  }

  std::string completions_path() const {
    const auto& p = url_.path_prefix;
    if (p.size() >= 3 && p.compare(p.size() - 3, 3, "/v1") == 0) return p + "/chat/completions";
    return p + "/v1/chat/completions";
  }

  nlohmann::json post(const nlohmann::json& body) const {
    const std::string payload = body.dump();
    const std::string path = completions_path();
    double backoff = config_.backoff_initial_s;
    ErrorCode last_code = ErrorCode::BackendUnavailable;
    std::string last_message;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
      }
      httplib::Result res = [&] {
        inflight_->acquire();
        struct Release {
          std::counting_semaphore<1024>* s;
          ~Release() { s->release(); }
        } release{inflight_.get()};
        return make_client()->Post(path, payload, "application/json");
      }();
      if (!res) {
        const auto err = res.error();
        last_code = (err == httplib::Error::Read || err == httplib::Error::Write ||
                     err == httplib::Error::ConnectionTimeout)
                        ? ErrorCode::Timeout
                        : ErrorCode::BackendUnavailable;
        last_message = httplib::to_string(err);
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_code = ErrorCode::BackendUnavailable;
        last_message = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status >= 400) {
        throw Error(ErrorCode::InvalidArgument,
                    "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
      }
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::BackendUnavailable, std::string("malformed response body: ") + e.what());
      }
    }
    throw Error(last_code, config_.base_url + path + " after " +
                               std::to_string(config_.max_retries + 1) + " attempts: " + last_message);
  }

  RemoteConfig config_;
  detail::SplitUrl url_;
  std::unique_ptr<std::counting_semaphore<1024>> inflight_;
};

}  // namespace dualfocus
