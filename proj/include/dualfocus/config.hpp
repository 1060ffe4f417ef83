#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/backend.hpp"
#include "dualfocus/curate.hpp"
#include "dualfocus/image.hpp"
#include "dualfocus/pipeline.hpp"
#include "dualfocus/remote_backend.hpp"

namespace dualfocus {

enum class BackendKind { Mock, Remote };

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  std::string url = "http://127.0.0.1:8000";
  std::string model = "default";
  double timeout_s = 120.0;
  int max_inflight = 8;
  int max_retries = 3;
  std::string script;  // mock script path, relative to the config file
};

struct EnsembleMemberConfig {
  std::string id;
  std::string prompt_suffix;
  std::optional<BackendConfig> backend;
};

/// Appended to the question by the second default ensemble prompt.
inline constexpr std::string_view kLetterPromptSuffix =
    "\nAnswer with the option's letter from the given choices directly.";

struct RunConfig {
  BackendConfig backend;
  ZoomPolicy zoom;
  Mode mode = Mode::Dual;
  int parallelism = 4;
  int max_tokens = 64;
  std::vector<EnsembleMemberConfig> ensemble{{"plain", "", std::nullopt},
                                             {"letter", std::string(kLetterPromptSuffix), std::nullopt}};
  bool ensemble_rescore = false;
  CurationConfig curation;
  struct Paths {
    std::string input;
    std::string output;
    std::string summary;
    std::string items;
    std::string results;
    std::string manifest;
    std::string report_dir;
  } paths;
  std::filesystem::path base_dir = ".";  // directory of the config file
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::ConfigError, where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_[key].get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ConfigError, "key '" + child(key) + "': " + e.what());
    }
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_[key] : nullptr;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void reject_unknown() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw Error(ErrorCode::ConfigError, "unknown config key '" + child(k) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline BackendConfig backend_from_json(const nlohmann::json& j, const std::string& path) {
  ConfigReader r(j, path);
  BackendConfig b;
  std::string kind = "mock";
  r.read("kind", kind);
  if (kind == "mock") {
    b.kind = BackendKind::Mock;
  } else if (kind == "remote") {
    b.kind = BackendKind::Remote;
  } else {
    throw Error(ErrorCode::ConfigError, "key '" + r.child("kind") + "': expected mock or remote");
  }
  r.read("url", b.url);
  r.read("model", b.model);
  r.read("timeout_s", b.timeout_s);
  r.read("max_inflight", b.max_inflight);
  r.read("max_retries", b.max_retries);
  r.read("script", b.script);
  r.reject_unknown();
  if (b.timeout_s <= 0) throw Error(ErrorCode::ConfigError, "key '" + r.child("timeout_s") + "' must be > 0");
  if (b.max_inflight < 1) throw Error(ErrorCode::ConfigError, "key '" + r.child("max_inflight") + "' must be >= 1");
  if (b.max_retries < 0) throw Error(ErrorCode::ConfigError, "key '" + r.child("max_retries") + "' must be >= 0");
  return b;
}

inline nlohmann::json backend_to_json(const BackendConfig& b) {
  return {{"kind", b.kind == BackendKind::Mock ? "mock" : "remote"},
          {"url", b.url},
          {"model", b.model},
          {"timeout_s", b.timeout_s},
          {"max_inflight", b.max_inflight},
          {"max_retries", b.max_retries},
          {"script", b.script}};
}

}  // namespace detail

/// Parses a run configuration. Every object level rejects unknown keys and
/// errors name the offending key path.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::ConfigReader root(j, "");
  if (const auto* b = root.section("backend")) cfg.backend = detail::backend_from_json(*b, "backend");
  if (const auto* z = root.section("zoom")) {
    detail::ConfigReader r(*z, "zoom");
    int target = cfg.zoom.target_resolution;
    std::string interp = "bilinear";
    int pad = cfg.zoom.pad_value;
    r.read("target_resolution", target);
    r.read("interpolation", interp);
    r.read("pad_value", pad);
    r.reject_unknown();
    if (target < 8) throw Error(ErrorCode::ConfigError, "key 'zoom.target_resolution' must be >= 8");
    if (interp != "bilinear" && interp != "nearest") {
      throw Error(ErrorCode::ConfigError, "key 'zoom.interpolation': expected bilinear or nearest");
    }
    if (pad < 0 || pad > 255) throw Error(ErrorCode::ConfigError, "key 'zoom.pad_value' must be in [0, 255]");
    cfg.zoom = {target, interp == "nearest" ? Interpolation::Nearest : Interpolation::Bilinear,
                static_cast<std::uint8_t>(pad)};
  }
  if (const auto* p = root.section("pipeline")) {
    detail::ConfigReader r(*p, "pipeline");
    std::string mode(to_string(cfg.mode));
    r.read("mode", mode);
    r.read("parallelism", cfg.parallelism);
    r.read("max_tokens", cfg.max_tokens);
    r.reject_unknown();
    try {
      cfg.mode = mode_from_string(mode);
    } catch (const Error&) {
      throw Error(ErrorCode::ConfigError, "key 'pipeline.mode': expected macro, micro, dual or ensemble");
    }
    if (cfg.parallelism < 1) throw Error(ErrorCode::ConfigError, "key 'pipeline.parallelism' must be >= 1");
    if (cfg.max_tokens < 1) throw Error(ErrorCode::ConfigError, "key 'pipeline.max_tokens' must be >= 1");
  }
  if (const auto* e = root.section("ensemble")) {
    detail::ConfigReader r(*e, "ensemble");
    r.read("rescore", cfg.ensemble_rescore);
    if (const auto* members = r.section("members")) {
      if (!members->is_array()) throw Error(ErrorCode::ConfigError, "key 'ensemble.members' must be an array");
      cfg.ensemble.clear();
      for (std::size_t i = 0; i < members->size(); ++i) {
        const std::string path = "ensemble.members[" + std::to_string(i) + "]";
        detail::ConfigReader m((*members)[i], path);
        EnsembleMemberConfig mc;
        m.read("id", mc.id);
        m.read("prompt_suffix", mc.prompt_suffix);
        if (const auto* b = m.section("backend")) mc.backend = detail::backend_from_json(*b, path + ".backend");
        m.reject_unknown();
        if (mc.id.empty()) mc.id = "member" + std::to_string(i);
        cfg.ensemble.push_back(std::move(mc));
      }
    }
    r.reject_unknown();
    if (cfg.ensemble.size() < 2) throw Error(ErrorCode::ConfigError, "key 'ensemble.members' needs >= 2 entries");
  }
  if (const auto* c = root.section("curation")) {
    detail::ConfigReader r(*c, "curation");
    std::string fmt = "normalized";
    r.read("iou_threshold", cfg.curation.iou_threshold);
    r.read("box_format", fmt);
    r.read("decimals", cfg.curation.decimals);
    r.read("parallelism", cfg.curation.parallelism);
    r.reject_unknown();
    if (fmt != "normalized" && fmt != "pixel") {
      throw Error(ErrorCode::ConfigError, "key 'curation.box_format': expected normalized or pixel");
    }
    cfg.curation.box_format = fmt == "pixel" ? BoxFormat::Pixel : BoxFormat::Normalized;
    if (cfg.curation.iou_threshold < 0 || cfg.curation.iou_threshold > 1) {
      throw Error(ErrorCode::ConfigError, "key 'curation.iou_threshold' must be in [0, 1]");
    }
    if (cfg.curation.decimals < 1 || cfg.curation.decimals > 9) {
      throw Error(ErrorCode::ConfigError, "key 'curation.decimals' must be in [1, 9]");
    }
  }
  if (const auto* p = root.section("paths")) {
    detail::ConfigReader r(*p, "paths");
    r.read("input", cfg.paths.input);
    r.read("output", cfg.paths.output);
    r.read("summary", cfg.paths.summary);
    r.read("items", cfg.paths.items);
    r.read("results", cfg.paths.results);
    r.read("manifest", cfg.paths.manifest);
    r.read("report_dir", cfg.paths.report_dir);
    r.reject_unknown();
  }
  root.reject_unknown();
  return cfg;
}

/// Canonical form of the resolved configuration (what the hash covers).
inline nlohmann::json to_json(const RunConfig& c) {
  auto members = nlohmann::json::array();
  for (const auto& m : c.ensemble) {
    nlohmann::json mj = {{"id", m.id}, {"prompt_suffix", m.prompt_suffix}};
    if (m.backend) mj["backend"] = detail::backend_to_json(*m.backend);
    members.push_back(mj);
  }
  return {{"backend", detail::backend_to_json(c.backend)},
          {"zoom",
           {{"target_resolution", c.zoom.target_resolution},
            {"interpolation", c.zoom.interpolation == Interpolation::Nearest ? "nearest" : "bilinear"},
            {"pad_value", c.zoom.pad_value}}},
          {"pipeline", {{"mode", to_string(c.mode)}, {"parallelism", c.parallelism}, {"max_tokens", c.max_tokens}}},
          {"ensemble", {{"members", members}, {"rescore", c.ensemble_rescore}}},
          {"curation",
           {{"iou_threshold", c.curation.iou_threshold},
            {"box_format", c.curation.box_format == BoxFormat::Pixel ? "pixel" : "normalized"},
            {"decimals", c.curation.decimals},
            {"parallelism", c.curation.parallelism}}},
          {"paths",
           {{"input", c.paths.input},
            {"output", c.paths.output},
            {"summary", c.paths.summary},
            {"items", c.paths.items},
            {"results", c.paths.results},
            {"manifest", c.paths.manifest},
            {"report_dir", c.paths.report_dir}}}};
}

/// FNV-1a 64 over the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  const std::string canon = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fingerprint_hex(h);
}

/// Applies DF_BACKEND_URL to the main backend and to member backends.
inline void apply_env_overrides(RunConfig& c) {
  if (const char* url = std::getenv(kBackendUrlEnv); url != nullptr && *url != '\0') {
    c.backend.url = url;
    for (auto& m : c.ensemble) {
      if (m.backend) m.backend->url = url;
    }
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  RunConfig cfg = run_config_from_json(j);
  cfg.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  apply_env_overrides(cfg);
  return cfg;
}

inline std::filesystem::path resolve_path(const RunConfig& c, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() ? c.base_dir / path : path;
}

inline std::unique_ptr<Backend> make_backend(const BackendConfig& b, const std::filesystem::path& base_dir) {
  if (b.kind == BackendKind::Remote) {
    RemoteConfig rc;
    rc.base_url = b.url;
    rc.model = b.model;
    rc.timeout_s = b.timeout_s;
    rc.max_inflight = b.max_inflight;
    rc.max_retries = b.max_retries;
    return std::make_unique<RemoteBackend>(rc);
  }
  if (b.script.empty()) return std::make_unique<MockBackend>(MockScript{});
  std::filesystem::path p(b.script);
  if (p.is_relative()) p = base_dir / p;
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open mock script " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, p.string() + ": " + e.what());
  }
  return std::make_unique<MockBackend>(mock_script_from_json(j));
}

/// Backends instantiated for a run: the main one plus per-member overrides.
struct BackendSet {
  std::unique_ptr<Backend> main;
  std::vector<std::unique_ptr<Backend>> members;  // parallel to RunConfig::ensemble, may hold nullptr
};

inline BackendSet make_backends(const RunConfig& c) {
  BackendSet set;
  set.main = make_backend(c.backend, c.base_dir);
  for (const auto& m : c.ensemble) {
    set.members.push_back(m.backend ? make_backend(*m.backend, c.base_dir) : nullptr);
  }
  return set;
}

inline PipelineConfig pipeline_config(const RunConfig& c, const BackendSet& backends) {
  PipelineConfig p;
  p.mode = c.mode;
  p.zoom = c.zoom;
  p.generation.max_tokens = c.max_tokens;
  p.generation.temperature = 0.0;
  p.parallelism = c.parallelism;
  for (std::size_t i = 0; i < c.ensemble.size(); ++i) {
    p.ensemble.push_back({c.ensemble[i].id, c.ensemble[i].prompt_suffix,
                          i < backends.members.size() ? backends.members[i].get() : nullptr});
  }
  p.ensemble_rescore = c.ensemble_rescore;
  p.config_hash = config_hash(c);
  return p;
}

}  // namespace dualfocus
