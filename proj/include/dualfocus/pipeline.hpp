#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/backend.hpp"
#include "dualfocus/boxparse.hpp"
#include "dualfocus/image.hpp"
#include "dualfocus/parallel.hpp"
#include "dualfocus/prompting.hpp"

namespace dualfocus {

/// exp of the mean negative log-probability of an answer's tokens.
///
/// The mean is accumulated as offsets from the first value, so a run of
/// identical logprobs l gives exactly exp(-l).
inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) {
    throw Error(ErrorCode::EmptyAnswer, "perplexity of an empty answer");
  }
  for (double v : logprobs) {
    if (!std::isfinite(v) || v > 0.0) {
      throw Error(ErrorCode::InvalidArgument, "logprob must be finite and <= 0");
    }
  }
  const double base = logprobs.front();
  double offset = 0.0;
  for (double v : logprobs) offset += v - base;
  const double mean = base + offset / static_cast<double>(logprobs.size());
  return std::exp(-mean);
}

inline double perplexity(const std::vector<TokenLogprob>& tokens) {
  std::vector<double> lps;
  lps.reserve(tokens.size());
  for (const auto& t : tokens) lps.push_back(t.logprob);
  return perplexity(lps);
}

inline constexpr std::string_view kMacroPathway = "macro";
inline constexpr std::string_view kMicroPathway = "micro";

struct ScoredAnswer {
  std::string text;
  std::vector<TokenLogprob> tokens;
  double ppl = 1.0;
  std::string pathway;

  friend bool operator==(const ScoredAnswer&, const ScoredAnswer&) = default;
};

inline ScoredAnswer make_scored(std::string text, std::vector<TokenLogprob> tokens, std::string pathway) {
  const double ppl = perplexity(tokens);
  return {std::move(text), std::move(tokens), ppl, std::move(pathway)};
}

inline ScoredAnswer make_scored(GenerationResult r, std::string pathway) {
  return make_scored(std::move(r.text), std::move(r.tokens), std::move(pathway));
}

enum class SelectionReason { MicroLowerPpl, MacroLowerPpl, MicroFailedFallback };

constexpr std::string_view to_string(SelectionReason r) {
  switch (r) {
    case SelectionReason::MicroLowerPpl: return "micro_lower_ppl";
    case SelectionReason::MacroLowerPpl: return "macro_lower_ppl";
    case SelectionReason::MicroFailedFallback: return "micro_failed_fallback";
  }
  return "micro_failed_fallback";
}

inline SelectionReason selection_reason_from_string(std::string_view s) {
  if (s == "micro_lower_ppl") return SelectionReason::MicroLowerPpl;
  if (s == "macro_lower_ppl") return SelectionReason::MacroLowerPpl;
  if (s == "micro_failed_fallback") return SelectionReason::MicroFailedFallback;
  throw Error(ErrorCode::SchemaError, "unknown selection_reason '" + std::string(s) + "'");
}

struct Selection {
  std::string chosen;
  SelectionReason reason;
};

/// Macro wins only with a strictly lower perplexity; ties go to micro.
inline Selection select(const ScoredAnswer& macro, const ScoredAnswer& micro) {
  if (macro.ppl < micro.ppl) return {macro.text, SelectionReason::MacroLowerPpl};
  return {micro.text, SelectionReason::MicroLowerPpl};
}

inline ScoredAnswer run_macro(ImageRef img, std::string_view question, const Backend& backend,
                              const GenerationParams& params = {}) {
  const auto ctx = build_macro(std::move(img), question);
  return make_scored(backend.generate(ctx, params), std::string(kMacroPathway));
}

/// BoxPredictionFailed, carrying the reply that could not be used.
class BoxPredictionError : public Error {
 public:
  BoxPredictionError(const std::string& detail, std::string reply)
      : Error(ErrorCode::BoxPredictionFailed, detail), reply_(std::move(reply)) {}
  const std::string& reply() const noexcept { return reply_; }

 private:
  std::string reply_;
};

struct MicroResult {
  ScoredAnswer answer;
  NormBox box;
  std::string box_reply;
};

/// Box query, crop and zoom, then the two-image follow-up turn.
inline MicroResult run_micro(ImageRef img, std::string_view question, const Backend& backend,
                             const ZoomPolicy& zoom_policy = {}, const GenerationParams& params = {}) {
  const ImageBuf& full = *img;
  const auto query = build_box_query(img, question);
  GenerationResult box_reply = backend.generate(query, params);

  std::optional<NormBox> box;
  ImageRef sub;
  try {
    box = parse_box(box_reply.text, full.width(), full.height()).box;
    sub = std::make_shared<const ImageBuf>(zoom(crop(full, *box), zoom_policy));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoCoordinates || e.code() == ErrorCode::DegenerateBox ||
        e.code() == ErrorCode::AmbiguousCount) {
      throw BoxPredictionError(std::string(e.what()) + " in reply '" + box_reply.text + "'", box_reply.text);
    }
    throw;
  }
  const auto ctx = extend_micro(query, box_reply.text, std::move(sub), question);
  return {make_scored(backend.generate(ctx, params), std::string(kMicroPathway)), *box,
          std::move(box_reply.text)};
}

struct DualResult {
  ScoredAnswer macro;
  std::optional<ScoredAnswer> micro;
  std::optional<NormBox> predicted_box;
  std::string chosen;
  SelectionReason selection_reason = SelectionReason::MicroFailedFallback;
  std::string box_reply;
  std::string micro_failure;
};

/// Both pathways, then perplexity selection. A failed box prediction falls
/// back to the macro answer; backend errors propagate.
inline DualResult run_dual(ImageRef img, std::string_view question, const Backend& backend,
                           const ZoomPolicy& zoom_policy = {}, const GenerationParams& params = {}) {
  DualResult out{run_macro(img, question, backend, params), {}, {}, {}, {}, {}, {}};
  try {
    auto micro = run_micro(std::move(img), question, backend, zoom_policy, params);
    out.predicted_box = micro.box;
    out.box_reply = std::move(micro.box_reply);
    out.micro = std::move(micro.answer);
  } catch (const BoxPredictionError& e) {
    out.micro_failure = e.what();
    out.box_reply = e.reply();
    out.chosen = out.macro.text;
    out.selection_reason = SelectionReason::MicroFailedFallback;
    return out;
  }
  auto sel = select(out.macro, *out.micro);
  out.chosen = std::move(sel.chosen);
  out.selection_reason = sel.reason;
  return out;
}

/// Index of the lowest-perplexity candidate; the earliest wins ties.
inline std::size_t ppl_ensemble(std::span<const ScoredAnswer> candidates) {
  if (candidates.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "ppl_ensemble needs at least two candidates");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].ppl < candidates[best].ppl) best = i;
  }
  return best;
}

/// One voice in an ensemble: a backend plus a prompt variant.
struct EnsembleMember {
  std::string id;
  const Backend* backend = nullptr;
  std::string prompt_suffix;
};

struct EnsembleResult {
  std::vector<ScoredAnswer> candidates;
  /// Perplexities used for selection: rescored under a shared context when
  /// requested and supported, otherwise the generation-time ones.
  std::vector<double> selection_ppl;
  bool rescored = false;
  std::size_t chosen_index = 0;
};

inline EnsembleResult run_ensemble(const ImageRef& img, std::string_view question,
                                   std::span<const EnsembleMember> members, bool rescore,
                                   const GenerationParams& params = {}) {
  if (members.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "ensemble needs at least two members");
  }
  EnsembleResult out;
  for (const auto& m : members) {
    if (m.backend == nullptr) throw Error(ErrorCode::InvalidArgument, "ensemble member without backend");
    const auto ctx = build_macro(img, std::string(question) + m.prompt_suffix);
    out.candidates.push_back(make_scored(m.backend->generate(ctx, params), m.id));
  }
  std::vector<ScoredAnswer> ranked = out.candidates;
  if (rescore) {
    const auto& ref = members.front();
    const auto ctx = build_macro(img, std::string(question) + ref.prompt_suffix);
    try {
      for (auto& c : ranked) c = make_scored(c.text, ref.backend->score(ctx, c.text), c.pathway);
      out.rescored = true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnsupportedByServer) throw;
      ranked = out.candidates;
    }
  }
  for (const auto& c : ranked) out.selection_ppl.push_back(c.ppl);
  out.chosen_index = ppl_ensemble(ranked);
  return out;
}

enum class Mode { Macro, Micro, Dual, Ensemble };

constexpr std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Macro: return "macro";
    case Mode::Micro: return "micro";
    case Mode::Dual: return "dual";
    case Mode::Ensemble: return "ensemble";
  }
  return "dual";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "macro") return Mode::Macro;
  if (s == "micro") return Mode::Micro;
  if (s == "dual") return Mode::Dual;
  if (s == "ensemble") return Mode::Ensemble;
  throw Error(ErrorCode::ConfigError, "unknown mode '" + std::string(s) + "'");
}

struct EnsembleVariant {
  std::string id;
  std::string prompt_suffix;
  const Backend* backend = nullptr;  // nullptr: the batch's main backend
};

struct PipelineConfig {
  Mode mode = Mode::Dual;
  ZoomPolicy zoom;
  GenerationParams generation;
  int parallelism = 1;
  std::vector<EnsembleVariant> ensemble;
  bool ensemble_rescore = false;
  std::string config_hash;
};

struct BatchItem {
  std::string id;
  std::string question;
  std::function<ImageRef()> image;
};

/// Outcome of one item in any mode. `error` is set when the item failed.
struct ItemResult {
  std::string item_id;
  Mode mode = Mode::Dual;
  std::optional<ScoredAnswer> macro;
  std::optional<ScoredAnswer> micro;
  std::optional<NormBox> predicted_box;
  std::string box_reply;
  std::vector<ScoredAnswer> candidates;
  std::vector<double> selection_ppl;
  bool rescored = false;
  std::optional<std::size_t> chosen_index;
  std::string chosen;
  std::optional<SelectionReason> selection_reason;
  std::string micro_failure;
  std::optional<std::string> error;
  std::optional<ErrorCode> error_code;

  bool ok() const noexcept { return !error.has_value(); }
};

inline ItemResult item_from_dual(std::string id, DualResult d) {
  ItemResult r;
  r.item_id = std::move(id);
  r.mode = Mode::Dual;
  r.chosen = std::move(d.chosen);
  r.selection_reason = d.selection_reason;
  r.macro = std::move(d.macro);
  r.micro = std::move(d.micro);
  r.predicted_box = d.predicted_box;
  r.box_reply = std::move(d.box_reply);
  r.micro_failure = std::move(d.micro_failure);
  return r;
}

/// Runs one item in the configured mode. Exceptions become an item error.
inline ItemResult run_item(const BatchItem& item, const Backend& backend, const PipelineConfig& cfg) {
  ItemResult r;
  r.item_id = item.id;
  r.mode = cfg.mode;
  try {
    ImageRef img = item.image();
    switch (cfg.mode) {
      case Mode::Macro: {
        r.macro = run_macro(img, item.question, backend, cfg.generation);
        r.chosen = r.macro->text;
        break;
      }
      case Mode::Micro: {
        auto m = run_micro(img, item.question, backend, cfg.zoom, cfg.generation);
        r.predicted_box = m.box;
        r.box_reply = std::move(m.box_reply);
        r.micro = std::move(m.answer);
        r.chosen = r.micro->text;
        break;
      }
      case Mode::Dual: {
        r = item_from_dual(item.id, run_dual(img, item.question, backend, cfg.zoom, cfg.generation));
        break;
      }
      case Mode::Ensemble: {
        std::vector<EnsembleMember> members;
        for (const auto& v : cfg.ensemble) {
          members.push_back({v.id, v.backend != nullptr ? v.backend : &backend, v.prompt_suffix});
        }
        auto e = run_ensemble(img, item.question, members, cfg.ensemble_rescore, cfg.generation);
        r.chosen = e.candidates[e.chosen_index].text;
        r.chosen_index = e.chosen_index;
        r.candidates = std::move(e.candidates);
        r.selection_ppl = std::move(e.selection_ppl);
        r.rescored = e.rescored;
        break;
      }
    }
  } catch (const BoxPredictionError& e) {
    r.box_reply = e.reply();
    r.error = std::string("item ") + item.id + ": " + e.what();
    r.error_code = e.code();
  } catch (const Error& e) {
    r.error = std::string("item ") + item.id + ": " + e.what();
    r.error_code = e.code();
  } catch (const std::exception& e) {
    r.error = std::string("item ") + item.id + ": " + e.what();
  }
  return r;
}

struct ItemTiming {
  std::string item_id;
  double millis = 0.0;
  bool ok = true;
  std::string error;
};

struct RunManifest {
  std::string config_hash;
  std::string backend_id;
  Mode mode = Mode::Dual;
  int parallelism = 1;
  std::size_t total = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  double wall_millis = 0.0;
  std::vector<ItemTiming> timings;
};

struct BatchOutput {
  std::vector<ItemResult> results;
  RunManifest manifest;
};

/// Runs every item with bounded parallelism. Results keep input order; a
/// failing item is recorded in the manifest and never aborts the batch.
inline BatchOutput run_batch(std::span<const BatchItem> items, const Backend& backend,
                             const PipelineConfig& cfg) {
  if (items.empty()) throw Error(ErrorCode::InvalidArgument, "run_batch needs at least one item");
  if (cfg.mode == Mode::Ensemble && cfg.ensemble.size() < 2) {
    throw Error(ErrorCode::ConfigError, "ensemble mode needs at least two variants");
  }
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto timed = parallel_map_ordered(items.size(), cfg.parallelism, [&](std::size_t i) {
    const auto t0 = Clock::now();
    ItemResult r = run_item(items[i], backend, cfg);
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return std::make_pair(std::move(r), ms);
  });

  BatchOutput out;
  out.manifest.config_hash = cfg.config_hash;
  out.manifest.backend_id = backend.id();
  out.manifest.mode = cfg.mode;
  out.manifest.parallelism = cfg.parallelism;
  out.manifest.total = items.size();
  for (auto& [r, ms] : timed) {
    out.manifest.timings.push_back({r.item_id, ms, r.ok(), r.error.value_or("")});
    (r.ok() ? out.manifest.succeeded : out.manifest.failed)++;
    out.results.push_back(std::move(r));
  }
  out.manifest.wall_millis = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------- JSON

inline nlohmann::json to_json(const NormBox& b) { return {b.x1(), b.y1(), b.x2(), b.y2()}; }

inline nlohmann::json to_json(const ScoredAnswer& a) {
  return {{"text", a.text}, {"tokens", to_json(a.tokens)}, {"ppl", a.ppl}, {"pathway", a.pathway}};
}

inline ScoredAnswer scored_from_json(const nlohmann::json& j) {
  ScoredAnswer a{j.at("text").get<std::string>(), tokens_from_json(j.at("tokens")),
                 j.at("ppl").get<double>(), j.at("pathway").get<std::string>()};
  if (!a.tokens.empty() && std::abs(perplexity(a.tokens) - a.ppl) > 1e-12 * a.ppl) {
    throw Error(ErrorCode::SchemaError, "stored ppl disagrees with its tokens");
  }
  return a;
}

/// One results-JSONL line. Timings stay in the manifest so this is
/// reproducible byte for byte.
inline nlohmann::json to_json(const ItemResult& r) {
  nlohmann::json j = {{"item_id", r.item_id}, {"mode", to_string(r.mode)}, {"ok", r.ok()}};
  if (r.error) {
    j["error"] = *r.error;
    if (r.error_code) j["error_code"] = to_string(*r.error_code);
    if (!r.box_reply.empty()) j["box_reply"] = r.box_reply;
    return j;
  }
  j["chosen"] = r.chosen;
  if (r.macro) j["macro"] = to_json(*r.macro);
  if (r.micro) j["micro"] = to_json(*r.micro);
  if (r.predicted_box) j["predicted_box"] = to_json(*r.predicted_box);
  if (!r.box_reply.empty()) j["box_reply"] = r.box_reply;
  if (r.selection_reason) j["selection_reason"] = to_string(*r.selection_reason);
  if (!r.micro_failure.empty()) j["micro_failure"] = r.micro_failure;
  if (!r.candidates.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& c : r.candidates) arr.push_back(to_json(c));
    j["candidates"] = arr;
    j["selection_ppl"] = r.selection_ppl;
    j["rescored"] = r.rescored;
  }
  if (r.chosen_index) j["chosen_index"] = *r.chosen_index;
  return j;
}

inline ItemResult item_result_from_json(const nlohmann::json& j) {
  ItemResult r;
  r.item_id = j.at("item_id").get<std::string>();
  r.mode = mode_from_string(j.at("mode").get<std::string>());
  if (!j.at("ok").get<bool>()) {
    r.error = j.at("error").get<std::string>();
    if (j.contains("error_code")) r.error_code = error_code_from_string(j["error_code"].get<std::string>());
    r.box_reply = j.value("box_reply", std::string());
    return r;
  }
  r.chosen = j.at("chosen").get<std::string>();
  if (j.contains("macro")) r.macro = scored_from_json(j["macro"]);
  if (j.contains("micro")) r.micro = scored_from_json(j["micro"]);
  if (j.contains("predicted_box")) {
    const auto b = j["predicted_box"].get<std::vector<double>>();
    if (b.size() != 4) throw Error(ErrorCode::SchemaError, "predicted_box needs four values");
    r.predicted_box = NormBox(b[0], b[1], b[2], b[3]);
  }
  r.box_reply = j.value("box_reply", std::string());
  if (j.contains("selection_reason")) {
    r.selection_reason = selection_reason_from_string(j["selection_reason"].get<std::string>());
  }
  r.micro_failure = j.value("micro_failure", std::string());
  if (j.contains("candidates")) {
    for (const auto& c : j["candidates"]) r.candidates.push_back(scored_from_json(c));
    r.selection_ppl = j.at("selection_ppl").get<std::vector<double>>();
    r.rescored = j.value("rescored", false);
  }
  if (j.contains("chosen_index")) r.chosen_index = j["chosen_index"].get<std::size_t>();
  return r;
}

inline nlohmann::json to_json(const RunManifest& m) {
  auto timings = nlohmann::json::array();
  for (const auto& t : m.timings) {
    nlohmann::json e = {{"item_id", t.item_id}, {"millis", t.millis}, {"ok", t.ok}};
    if (!t.ok) e["error"] = t.error;
    timings.push_back(e);
  }
  return {{"config_hash", m.config_hash}, {"backend_id", m.backend_id},
          {"mode", to_string(m.mode)},    {"parallelism", m.parallelism},
          {"total", m.total},             {"succeeded", m.succeeded},
          {"failed", m.failed},           {"wall_millis", m.wall_millis},
          {"items", timings}};
}

}  // namespace dualfocus
