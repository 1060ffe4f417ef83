#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/error.hpp"
#include "dualfocus/prompting.hpp"

namespace dualfocus {

struct TokenLogprob {
  std::string token_text;
  double logprob;  // natural log, <= 0

  friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

enum class FinishReason { Stop, Length, Error };

constexpr std::string_view to_string(FinishReason r) {
  switch (r) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
  }
  return "error";
}

inline FinishReason finish_reason_from_string(std::string_view s) {
  if (s == "stop" || s == "eos" || s.empty()) return FinishReason::Stop;
  if (s == "length") return FinishReason::Length;
  return FinishReason::Error;
}

struct GenerationResult {
  std::string text;
  std::vector<TokenLogprob> tokens;
  FinishReason finish_reason = FinishReason::Stop;

  friend bool operator==(const GenerationResult&, const GenerationResult&) = default;
};

struct GenerationParams {
  int max_tokens = 64;
  double temperature = 0.0;
};

/// How a backend's token strings reassemble into the generated text.
enum class TokenJoin {
  Concatenate,  // text == token_text[0] + token_text[1] + ...
  Opaque,       // server-side detokenization; no reassembly guarantee
};

inline void validate_logprobs(const std::vector<TokenLogprob>& tokens) {
  for (const auto& t : tokens) {
    if (!std::isfinite(t.logprob) || t.logprob > 0.0) {
      throw Error(ErrorCode::InvalidArgument,
                  "token logprob must be finite and <= 0, got " + std::to_string(t.logprob));
    }
  }
}

/// The model service: visual encoder, connector, tokenizer and language model
/// behind one opaque call surface. Implementations must be callable
/// concurrently from several threads.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual GenerationResult generate(const PromptContext& ctx, const GenerationParams& params) const = 0;

  /// Log-probabilities of `forced_answer` as the assistant reply to `ctx`.
  virtual std::vector<TokenLogprob> score(const PromptContext& ctx,
                                          std::string_view forced_answer) const = 0;

  virtual std::string id() const = 0;

  virtual TokenJoin join_convention() const { return TokenJoin::Concatenate; }

  /// Startup reachability check; throws BackendUnavailable.
  virtual void probe() const {}
};

namespace detail {

inline std::vector<std::string> utf8_codepoints(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

// Words with their leading whitespace attached: "a red car" -> "a", " red", " car".
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  bool seen_non_space = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n';
    if (space && seen_non_space) {
      out.push_back(std::move(cur));
      cur.clear();
      seen_non_space = false;
    }
    cur += c;
    if (!space) seen_non_space = true;
  }
  if (!cur.empty()) {
    if (!seen_non_space && !out.empty()) {
      out.back() += cur;
    } else {
      out.push_back(std::move(cur));
    }
  }
  return out;
}

}  // namespace detail

/// Splits `text` into exactly `n` pieces whose concatenation is `text`:
/// word pieces when the word count matches, otherwise even codepoint chunks.
inline std::vector<std::string> split_into_tokens(std::string_view text, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "token count must be >= 1");
  if (n == 1) return {std::string(text)};
  auto words = detail::split_words(text);
  if (words.size() == n) return words;
  const auto cps = detail::utf8_codepoints(text);
  if (cps.size() < n) {
    throw Error(ErrorCode::InvalidArgument, "cannot split '" + std::string(text) + "' into " +
                                                std::to_string(n) + " tokens");
  }
  std::vector<std::string> out(n);
  for (std::size_t k = 0; k < cps.size(); ++k) out[k * n / cps.size()] += cps[k];
  return out;
}

/// Canned result whose tokens reassemble exactly into `text`.
inline GenerationResult canned(std::string text, const std::vector<double>& logprobs,
                               FinishReason reason = FinishReason::Stop) {
  const auto pieces = split_into_tokens(text, logprobs.size());
  GenerationResult r{std::move(text), {}, reason};
  for (std::size_t i = 0; i < pieces.size(); ++i) r.tokens.push_back({pieces[i], logprobs[i]});
  validate_logprobs(r.tokens);
  return r;
}

/// One scripted response. A rule matches when its predicate accepts the context.
struct MockRule {
  std::function<bool(const PromptContext&)> matches;
  std::variant<GenerationResult, ErrorCode> outcome;
};

/// Predicate: context kind equals `kind` (nullopt = any) and the last user
/// text contains `needle`.
inline std::function<bool(const PromptContext&)> match_prompt(std::optional<PromptKind> kind,
                                                              std::string needle) {
  return [kind, needle = std::move(needle)](const PromptContext& ctx) {
    if (kind && ctx.kind() != *kind) return false;
    return ctx.last_user_text().find(needle) != std::string::npos;
  };
}

struct MockScript {
  std::string id = "mock";
  std::vector<MockRule> rules;
  GenerationResult default_result = canned("unknown", {-5.0});
  /// (context fingerprint, answer) -> scripted score.
  std::map<std::pair<std::uint64_t, std::string>, std::vector<TokenLogprob>> scores;
  double default_score_logprob = -3.0;
};

/// Deterministic in-process backend driven by a script. Immutable after
/// construction, so concurrent calls need no locking.
class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockScript script) : script_(std::move(script)) {
    for (const auto& rule : script_.rules) {
      if (const auto* r = std::get_if<GenerationResult>(&rule.outcome)) check(*r);
    }
    check(script_.default_result);
  }

  GenerationResult generate(const PromptContext& ctx, const GenerationParams& params) const override {
    for (const auto& rule : script_.rules) {
      if (!rule.matches(ctx)) continue;
      if (const auto* code = std::get_if<ErrorCode>(&rule.outcome)) {
        throw Error(*code, "scripted failure");
      }
      return truncate(std::get<GenerationResult>(rule.outcome), params);
    }
    return truncate(script_.default_result, params);
  }

  std::vector<TokenLogprob> score(const PromptContext& ctx, std::string_view forced_answer) const override {
    if (forced_answer.empty()) {
      throw Error(ErrorCode::InvalidArgument, "forced answer must be nonempty");
    }
    const auto it = script_.scores.find({ctx.fingerprint(), std::string(forced_answer)});
    if (it != script_.scores.end()) return it->second;
    std::vector<TokenLogprob> out;
    for (auto& w : detail::split_words(forced_answer)) {
      out.push_back({std::move(w), script_.default_score_logprob});
    }
    return out;
  }

  std::string id() const override { return script_.id; }

 private:
  static void check(const GenerationResult& r) {
    validate_logprobs(r.tokens);
    std::string joined;
    for (const auto& t : r.tokens) joined += t.token_text;
    if (joined != r.text) {
      throw Error(ErrorCode::InvalidArgument, "mock result tokens do not reassemble '" + r.text + "'");
    }
  }

  static GenerationResult truncate(const GenerationResult& r, const GenerationParams& params) {
    if (params.max_tokens <= 0 || r.tokens.size() <= static_cast<std::size_t>(params.max_tokens)) {
      return r;
    }
    GenerationResult out{{}, {r.tokens.begin(), r.tokens.begin() + params.max_tokens},
                         FinishReason::Length};
    for (const auto& t : out.tokens) out.text += t.token_text;
    return out;
  }

  MockScript script_;
};

inline std::string fingerprint_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline ErrorCode error_code_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::ConfigError); ++i) {
    const auto c = static_cast<ErrorCode>(i);
    if (to_string(c) == s) return c;
  }
  throw Error(ErrorCode::ConfigError, "unknown error code '" + std::string(s) + "'");
}

namespace detail {

inline GenerationResult canned_from_json(const nlohmann::json& j) {
  const std::string text = j.at("text").get<std::string>();
  const auto logprobs = j.at("logprobs").get<std::vector<double>>();
  const auto reason = finish_reason_from_string(j.value("finish_reason", std::string("stop")));
  if (!j.contains("tokens")) return canned(text, logprobs, reason);
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() != logprobs.size()) {
    throw Error(ErrorCode::ConfigError, "mock rule tokens/logprobs length mismatch");
  }
  GenerationResult r{text, {}, reason};
  for (std::size_t i = 0; i < tokens.size(); ++i) r.tokens.push_back({tokens[i], logprobs[i]});
  return r;
}

inline std::optional<PromptKind> prompt_kind_from_string(std::string_view s) {
  if (s == "any") return std::nullopt;
  if (s == "macro") return PromptKind::Macro;
  if (s == "box_query") return PromptKind::BoxQuery;
  if (s == "micro") return PromptKind::Micro;
  throw Error(ErrorCode::ConfigError, "unknown mock rule kind '" + std::string(s) + "'");
}

}  // namespace detail

/// Reads a mock script document:
///   {"id": "...", "rules": [{"kind": "macro|box_query|micro|any", "contains": "...",
///                            "text": "...", "logprobs": [...], "tokens": [...]?}
///                           | {"kind": ..., "contains": ..., "error": "Timeout"}],
///    "default": {"text": ..., "logprobs": [...]},
///    "scores": [{"context": "<16 hex digits>", "answer": "...", "logprobs": [...]}],
///    "default_score_logprob": -3.0}
inline MockScript mock_script_from_json(const nlohmann::json& j) {
  MockScript s;
  try {
    s.id = j.value("id", std::string("mock"));
    for (const auto& r : j.value("rules", nlohmann::json::array())) {
      auto matcher = match_prompt(detail::prompt_kind_from_string(r.value("kind", std::string("any"))),
                                  r.value("contains", std::string()));
      if (r.contains("error")) {
        s.rules.push_back({std::move(matcher), error_code_from_string(r.at("error").get<std::string>())});
      } else {
        s.rules.push_back({std::move(matcher), detail::canned_from_json(r)});
      }
    }
    if (j.contains("default")) s.default_result = detail::canned_from_json(j.at("default"));
    for (const auto& sc : j.value("scores", nlohmann::json::array())) {
      const auto key = std::stoull(sc.at("context").get<std::string>(), nullptr, 16);
      std::vector<TokenLogprob> toks;
      const auto lps = sc.at("logprobs").get<std::vector<double>>();
      const auto pieces = split_into_tokens(sc.at("answer").get<std::string>(), lps.size());
      for (std::size_t i = 0; i < lps.size(); ++i) toks.push_back({pieces[i], lps[i]});
      validate_logprobs(toks);
      s.scores[{key, sc.at("answer").get<std::string>()}] = std::move(toks);
    }
    s.default_score_logprob = j.value("default_score_logprob", -3.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("mock script: ") + e.what());
  }
  return s;
}

inline nlohmann::json to_json(const TokenLogprob& t) {
  return {{"token", t.token_text}, {"logprob", t.logprob}};
}

inline nlohmann::json to_json(const std::vector<TokenLogprob>& ts) {
  auto arr = nlohmann::json::array();
  for (const auto& t : ts) arr.push_back(to_json(t));
  return arr;
}

inline std::vector<TokenLogprob> tokens_from_json(const nlohmann::json& arr) {
  std::vector<TokenLogprob> out;
  for (const auto& t : arr) out.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
  return out;
}

}  // namespace dualfocus
