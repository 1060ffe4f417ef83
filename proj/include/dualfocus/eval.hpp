#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/error.hpp"
#include "dualfocus/image.hpp"
#include "dualfocus/pipeline.hpp"

namespace dualfocus {

enum class PopeSplit { None, Adversarial, Popular, Random };

constexpr std::string_view to_string(PopeSplit s) {
  switch (s) {
    case PopeSplit::None: return "none";
    case PopeSplit::Adversarial: return "adversarial";
    case PopeSplit::Popular: return "popular";
    case PopeSplit::Random: return "random";
  }
  return "none";
}

inline PopeSplit pope_split_from_string(std::string_view s) {
  if (s == "none" || s.empty()) return PopeSplit::None;
  if (s == "adversarial") return PopeSplit::Adversarial;
  if (s == "popular") return PopeSplit::Popular;
  if (s == "random") return PopeSplit::Random;
  throw Error(ErrorCode::SchemaError, "unknown pope_split '" + std::string(s) + "'");
}

struct AnswerOption {
  std::string letter;
  std::string text;

  friend bool operator==(const AnswerOption&, const AnswerOption&) = default;
};

struct EvalTags {
  std::string benchmark;
  std::string dimension;
  PopeSplit pope_split = PopeSplit::None;

  friend bool operator==(const EvalTags&, const EvalTags&) = default;
};

struct EvalItem {
  std::string item_id;
  std::string image;
  std::string question;
  std::vector<AnswerOption> options;
  std::string gold;
  EvalTags tags;

  bool multiple_choice() const noexcept { return !options.empty(); }
};

inline nlohmann::json to_json(const EvalItem& it) {
  auto options = nlohmann::json::array();
  for (const auto& o : it.options) options.push_back({{"letter", o.letter}, {"text", o.text}});
  return {{"item_id", it.item_id},
          {"image", it.image},
          {"question", it.question},
          {"options", options},
          {"gold", it.gold},
          {"tags",
           {{"benchmark", it.tags.benchmark},
            {"dimension", it.tags.dimension},
            {"pope_split", to_string(it.tags.pope_split)}}}};
}

inline EvalItem eval_item_from_json(const nlohmann::json& j, std::size_t index) {
  EvalItem it;
  const auto get_str = [&](const nlohmann::json& obj, const char* name, bool required) -> std::string {
    if (!obj.contains(name)) {
      if (required) throw SchemaError(index, name, "missing");
      return {};
    }
    if (!obj[name].is_string()) throw SchemaError(index, name, "must be a string");
    return obj[name].get<std::string>();
  };
  if (!j.is_object()) throw SchemaError(index, "<item>", "item must be a JSON object");
  it.item_id = get_str(j, "item_id", true);
  it.image = get_str(j, "image", false);
  it.question = get_str(j, "question", true);
  it.gold = get_str(j, "gold", true);
  if (j.contains("options") && !j["options"].is_null()) {
    if (!j["options"].is_array()) throw SchemaError(index, "options", "must be an array");
    for (const auto& o : j["options"]) {
      if (!o.is_object() || !o.contains("letter") || !o.contains("text")) {
        throw SchemaError(index, "options", "entries need letter and text");
      }
      it.options.push_back({o["letter"].get<std::string>(), o["text"].get<std::string>()});
    }
  }
  if (j.contains("tags")) {
    const auto& t = j["tags"];
    it.tags.benchmark = get_str(t, "benchmark", false);
    it.tags.dimension = get_str(t, "dimension", false);
    try {
      it.tags.pope_split = pope_split_from_string(get_str(t, "pope_split", false));
    } catch (const Error& e) {
      throw SchemaError(index, "tags.pope_split", e.what());
    }
  }
  if (it.multiple_choice()) {
    const bool gold_is_letter = std::any_of(it.options.begin(), it.options.end(),
                                            [&](const AnswerOption& o) { return o.letter == it.gold; });
    if (!gold_is_letter) throw SchemaError(index, "gold", "must be one of the option letters");
  }
  return it;
}

inline std::vector<EvalItem> load_eval_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<EvalItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      items.push_back(eval_item_from_json(nlohmann::json::parse(line), lineno));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(lineno, "<line>", e.what());
    }
  }
  return items;
}

// ------------------------------------------------------------ matching

/// Lowercase, punctuation to spaces, whitespace collapsed and trimmed.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(u));
    } else {
      pending_space = true;
    }
  }
  return out;
}

enum class MatchMethod { Letter, OptionText, OpenExact, None };

constexpr std::string_view to_string(MatchMethod m) {
  switch (m) {
    case MatchMethod::Letter: return "letter";
    case MatchMethod::OptionText: return "option_text";
    case MatchMethod::OpenExact: return "open_exact";
    case MatchMethod::None: return "none";
  }
  return "none";
}

struct MatchResult {
  bool correct = false;
  MatchMethod method = MatchMethod::None;
  std::string extracted;  // letter or normalized answer that was compared

  /// Decided by comparing option texts rather than an explicit letter.
  bool fuzzy() const noexcept { return method == MatchMethod::OptionText; }
};

/// First standalone option letter in `prediction`, if any.
///
/// Uppercase letters count when not glued to other alphanumerics, except
/// "A"/"I" used as an English word ("A red car"). Lowercase letters count
/// only bracketed ("(b)") or as the whole reply ("b", "b.").
inline std::optional<std::string> extract_option_letter(std::string_view prediction,
                                                        const std::vector<AnswerOption>& options) {
  std::set<char> letters;
  for (const auto& o : options) {
    if (o.letter.size() == 1) letters.insert(static_cast<char>(std::toupper(static_cast<unsigned char>(o.letter[0]))));
  }
  const auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  const std::string trimmed = [&] {
    const auto b = prediction.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string();
    const auto e = prediction.find_last_not_of(" \t\r\n");
    return std::string(prediction.substr(b, e - b + 1));
  }();
  const std::size_t n = prediction.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char c = prediction[i];
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (!letters.contains(up)) continue;
    const char prev = i > 0 ? prediction[i - 1] : ' ';
    const char next = i + 1 < n ? prediction[i + 1] : ' ';
    if (alnum(prev) || alnum(next)) continue;
    if (std::isupper(static_cast<unsigned char>(c))) {
      const bool word_use = (c == 'A' || c == 'I') && next == ' ' && i + 2 < n &&
                            std::islower(static_cast<unsigned char>(prediction[i + 2]));
      if (!word_use) return std::string(1, up);
      continue;
    }
    const bool bracketed = (prev == '(' || prev == '[') && (next == ')' || next == ']');
    const bool whole = trimmed.size() <= 2 && !trimmed.empty() && trimmed[0] == c &&
                       (trimmed.size() == 1 || trimmed[1] == '.' || trimmed[1] == ')');
    if (bracketed || whole) return std::string(1, up);
  }
  return std::nullopt;
}

inline MatchResult match_answer(std::string_view prediction, const EvalItem& item) {
  if (item.multiple_choice()) {
    if (auto letter = extract_option_letter(prediction, item.options)) {
      return {*letter == item.gold, MatchMethod::Letter, *letter};
    }
    const std::string norm = normalize_answer(prediction);
    if (!norm.empty()) {
      for (const auto& o : item.options) {
        if (normalize_answer(o.text) == norm) return {o.letter == item.gold, MatchMethod::OptionText, o.letter};
      }
    }
    return {false, MatchMethod::None, {}};
  }
  const std::string norm = normalize_answer(prediction);
  return {!norm.empty() && norm == normalize_answer(item.gold), MatchMethod::OpenExact, norm};
}

// ------------------------------------------------------------ POPE

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t unparseable = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PopeMetrics {
  ConfusionCounts counts;
  double f1 = 0.0;
  double accuracy = 0.0;
};

/// F1 with "yes" as the positive class; 0 when there are no positives at all.
inline PopeMetrics pope_from_counts(const ConfusionCounts& c) {
  if (c.total() == 0) throw Error(ErrorCode::EmptySplit, "no items in split");
  PopeMetrics m{c, 0.0, 0.0};
  const std::size_t f1_den = 2 * c.tp + c.fp + c.fn;
  m.f1 = f1_den == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(f1_den);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return m;
}

/// yes / no / nullopt (unparseable) from the first word of a reply.
inline std::optional<bool> parse_yes_no(std::string_view text) {
  const std::string norm = normalize_answer(text);
  const std::string first = norm.substr(0, norm.find(' '));
  if (first == "yes") return true;
  if (first == "no") return false;
  return std::nullopt;
}

/// Unparseable predictions count as "no" and are tallied separately.
inline ConfusionCounts pope_counts(std::span<const EvalItem> items, std::span<const std::string> predictions,
                                   PopeSplit split) {
  if (items.size() != predictions.size()) {
    throw Error(ErrorCode::InvalidArgument, "items and predictions differ in length");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].tags.pope_split != split) continue;
    const auto gold = parse_yes_no(items[i].gold);
    if (!gold) throw Error(ErrorCode::InvalidArgument, "POPE gold must be yes/no for " + items[i].item_id);
    auto pred = parse_yes_no(predictions[i]);
    if (!pred) {
      ++c.unparseable;
      pred = false;
    }
    if (*gold && *pred) ++c.tp;
    else if (!*gold && *pred) ++c.fp;
    else if (*gold && !*pred) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline PopeMetrics pope_split_metrics(std::span<const EvalItem> items, std::span<const std::string> predictions,
                                      PopeSplit split) {
  const auto counts = pope_counts(items, predictions, split);
  if (counts.total() == 0) {
    throw Error(ErrorCode::EmptySplit, "split '" + std::string(to_string(split)) + "' has no items");
  }
  return pope_from_counts(counts);
}

/// Metrics for every POPE split present among the items.
inline std::map<std::string, PopeMetrics> pope_metrics(std::span<const EvalItem> items,
                                                       std::span<const std::string> predictions) {
  std::map<std::string, PopeMetrics> out;
  for (auto split : {PopeSplit::Adversarial, PopeSplit::Popular, PopeSplit::Random}) {
    const bool present = std::any_of(items.begin(), items.end(),
                                     [&](const EvalItem& it) { return it.tags.pope_split == split; });
    if (present) out.emplace(std::string(to_string(split)), pope_split_metrics(items, predictions, split));
  }
  return out;
}

// ------------------------------------------------------------ breakdowns

struct RateCell {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy() const noexcept { return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n); }
};

struct DimensionRow {
  std::string dimension;
  std::size_t n = 0;
  std::map<std::string, double> accuracy;  // mode -> rate
  std::map<std::string, double> delta;     // mode -> rate - baseline rate
};

/// Per-dimension accuracy for several modes over the same items, with
/// deltas against `baseline`.
inline std::vector<DimensionRow> dimension_breakdown(const std::vector<std::string>& dimensions,
                                                     const std::map<std::string, std::vector<bool>>& correct_by_mode,
                                                     const std::string& baseline) {
  if (!correct_by_mode.contains(baseline)) {
    throw Error(ErrorCode::InvalidArgument, "baseline mode '" + baseline + "' missing");
  }
  for (const auto& [mode, flags] : correct_by_mode) {
    if (flags.size() != dimensions.size()) {
      throw Error(ErrorCode::InvalidArgument, "mode '" + mode + "' has a different item count");
    }
  }
  std::map<std::string, std::map<std::string, RateCell>> cells;
  for (std::size_t i = 0; i < dimensions.size(); ++i) {
    if (dimensions[i].empty()) throw Error(ErrorCode::InvalidArgument, "item without dimension tag");
    for (const auto& [mode, flags] : correct_by_mode) {
      auto& c = cells[dimensions[i]][mode];
      ++c.n;
      if (flags[i]) ++c.correct;
    }
  }
  std::vector<DimensionRow> rows;
  for (const auto& [dim, by_mode] : cells) {
    DimensionRow row{dim, by_mode.begin()->second.n, {}, {}};
    for (const auto& [mode, c] : by_mode) row.accuracy[mode] = c.accuracy();
    for (const auto& [mode, rate] : row.accuracy) row.delta[mode] = rate - row.accuracy.at(baseline);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ------------------------------------------------------------ scoring

struct ScoredItem {
  std::string item_id;
  bool correct = false;
  bool failed = false;
  MatchResult match;
};

struct MetricsReport {
  std::string mode;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t failed = 0;
  std::size_t fuzzy_matched = 0;
  double accuracy = 0.0;
  std::map<std::string, RateCell> per_dimension;
  std::map<std::string, RateCell> per_benchmark;
  std::map<std::string, PopeMetrics> pope;
  std::string config_hash;
  std::optional<nlohmann::json> manifest;
};

struct ScoredRun {
  std::vector<ScoredItem> items;
  MetricsReport report;
};

/// Pure function of (items, results): failed items are scored incorrect and
/// counted separately so denominators match across modes.
inline ScoredRun score_results(std::span<const EvalItem> items, std::span<const ItemResult> results,
                               std::string mode) {
  if (items.size() != results.size()) {
    throw Error(ErrorCode::InvalidArgument, "items and results differ in length");
  }
  ScoredRun run;
  run.report.mode = std::move(mode);
  run.report.total = items.size();
  std::vector<std::string> predictions;
  std::vector<EvalItem> pope_items;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const auto& res = results[i];
    if (res.item_id != item.item_id) {
      throw Error(ErrorCode::InvalidArgument, "result order mismatch at " + item.item_id);
    }
    ScoredItem s{item.item_id, false, !res.ok(), {}};
    if (res.ok()) {
      s.match = match_answer(res.chosen, item);
      s.correct = s.match.correct;
    }
    if (s.failed) ++run.report.failed;
    if (s.correct) ++run.report.correct;
    if (s.match.fuzzy()) ++run.report.fuzzy_matched;
    const auto bump = [&](std::map<std::string, RateCell>& m, const std::string& key) {
      if (key.empty()) return;
      auto& c = m[key];
      ++c.n;
      if (s.correct) ++c.correct;
    };
    bump(run.report.per_dimension, item.tags.dimension);
    bump(run.report.per_benchmark, item.tags.benchmark);
    if (item.tags.pope_split != PopeSplit::None) {
      pope_items.push_back(item);
      predictions.push_back(res.ok() ? res.chosen : std::string());
    }
    run.items.push_back(std::move(s));
  }
  run.report.accuracy = run.report.total == 0 ? 0.0
                                              : static_cast<double>(run.report.correct) /
                                                    static_cast<double>(run.report.total);
  if (!pope_items.empty()) run.report.pope = pope_metrics(pope_items, predictions);
  return run;
}

inline nlohmann::json to_json(const RateCell& c) {
  return {{"n", c.n}, {"correct", c.correct}, {"accuracy", c.accuracy()}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json dims = nlohmann::json::object();
  for (const auto& [k, c] : r.per_dimension) dims[k] = to_json(c);
  nlohmann::json benches = nlohmann::json::object();
  for (const auto& [k, c] : r.per_benchmark) benches[k] = to_json(c);
  nlohmann::json pope = nlohmann::json::object();
  for (const auto& [k, m] : r.pope) {
    pope[k] = {{"f1", m.f1},
               {"accuracy", m.accuracy},
               {"tp", m.counts.tp},
               {"fp", m.counts.fp},
               {"fn", m.counts.fn},
               {"tn", m.counts.tn},
               {"unparseable", m.counts.unparseable}};
  }
  nlohmann::json j = {{"mode", r.mode},
                      {"total", r.total},
                      {"correct", r.correct},
                      {"failed", r.failed},
                      {"fuzzy_matched", r.fuzzy_matched},
                      {"accuracy", r.accuracy},
                      {"per_dimension", dims},
                      {"per_benchmark", benches},
                      {"pope", pope},
                      {"config_hash", r.config_hash}};
  if (r.manifest) j["manifest"] = *r.manifest;
  return j;
}

// ------------------------------------------------------------ benchmark runs

/// Produces the image for an item (default: decode item.image relative to a base dir).
using ImageResolver = std::function<ImageRef(const EvalItem&)>;

inline ImageResolver file_image_resolver(std::filesystem::path base_dir) {
  return [base = std::move(base_dir)](const EvalItem& it) {
    std::filesystem::path p(it.image);
    if (p.is_relative()) p = base / p;
    return std::make_shared<const ImageBuf>(load_image(p));
  };
}

struct BenchmarkRun {
  BatchOutput batch;
  ScoredRun scored;
};

inline BenchmarkRun run_benchmark(std::span<const EvalItem> items, const Backend& backend,
                                  const PipelineConfig& cfg, const ImageResolver& resolve) {
  if (items.empty()) throw Error(ErrorCode::InvalidArgument, "run_benchmark needs at least one item");
  std::vector<BatchItem> batch;
  batch.reserve(items.size());
  for (const auto& it : items) {
    batch.push_back({it.item_id, it.question, [&resolve, &it] { return resolve(it); }});
  }
  BenchmarkRun run;
  run.batch = run_batch(batch, backend, cfg);
  run.scored = score_results(items, run.batch.results, std::string(to_string(cfg.mode)));
  run.scored.report.config_hash = cfg.config_hash;
  run.scored.report.manifest = to_json(run.batch.manifest);
  return run;
}

/// One line of a results file: the pipeline outcome plus what is needed to
/// re-score it without the original items file.
inline nlohmann::json results_line(const EvalItem& item, const ItemResult& result, const ScoredItem& scored) {
  nlohmann::json j = to_json(result);
  j["item"] = to_json(item);
  j["correct"] = scored.correct;
  j["match_method"] = to_string(scored.match.method);
  return j;
}

struct ResultsFile {
  std::vector<EvalItem> items;
  std::vector<ItemResult> results;
  std::string mode;
  std::string config_hash;
};

/// Reads a results JSONL file. Malformed lines raise SchemaError carrying
/// the 1-based line number.
inline ResultsFile read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  ResultsFile f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      f.items.push_back(eval_item_from_json(j.at("item"), lineno));
      f.results.push_back(item_result_from_json(j));
      const std::string mode(to_string(f.results.back().mode));
      if (f.mode.empty()) f.mode = mode;
      if (f.mode != mode) throw SchemaError(lineno, "mode", "mixed modes in one results file");
      if (f.config_hash.empty()) f.config_hash = j.value("config_hash", std::string());
    } catch (const SchemaError& e) {
      throw SchemaError(lineno, e.field(), e.what());
    } catch (const std::exception& e) {
      throw SchemaError(lineno, "<line>", e.what());
    }
  }
  if (f.items.empty()) throw SchemaError(0, "<file>", "results file has no lines");
  return f;
}

// ------------------------------------------------------------ PPL diagnostics

inline std::vector<double> default_gap_edges() {
  const double inf = std::numeric_limits<double>::infinity();
  return {-inf, -2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0, inf};
}

struct GapHistogram {
  std::vector<double> edges;
  std::map<std::string, std::vector<std::size_t>> counts;  // tag -> per-bin counts
  std::map<std::string, std::size_t> micro_lower;          // gap > 0
  std::map<std::string, double> mean_gap;
};

/// Histogram of PPL_macro - PPL_micro per tag, over items where both
/// pathways produced an answer. Bins are [edges[k], edges[k+1]).
inline GapHistogram ppl_gap_histogram(std::span<const EvalItem> items, std::span<const ItemResult> results,
                                      std::vector<double> edges = default_gap_edges()) {
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw Error(ErrorCode::InvalidArgument, "histogram edges must be sorted, at least two");
  }
  GapHistogram h;
  h.edges = std::move(edges);
  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> ns;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (!r.ok() || !r.macro || !r.micro) continue;
    const std::string tag = items[i].tags.dimension.empty() ? "all" : items[i].tags.dimension;
    const double gap = r.macro->ppl - r.micro->ppl;
    auto& bins = h.counts[tag];
    bins.resize(h.edges.size() - 1, 0);
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), gap);
    const auto bin = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
        std::distance(h.edges.begin(), it) - 1, 0, static_cast<std::ptrdiff_t>(bins.size()) - 1));
    ++bins[bin];
    if (gap > 0.0) ++h.micro_lower[tag];
    else h.micro_lower.try_emplace(tag, 0);
    sums[tag] += gap;
    ++ns[tag];
  }
  for (const auto& [tag, n] : ns) h.mean_gap[tag] = sums[tag] / static_cast<double>(n);
  return h;
}

inline std::string format_edge(double e) {
  if (std::isinf(e)) return e < 0 ? "-inf" : "inf";
  std::ostringstream os;
  os << e;
  return os.str();
}

inline std::string gap_histogram_csv(const GapHistogram& h) {
  std::ostringstream os;
  os << "tag,bin_lo,bin_hi,count\n";
  for (const auto& [tag, bins] : h.counts) {
    for (std::size_t k = 0; k < bins.size(); ++k) {
      os << tag << ',' << format_edge(h.edges[k]) << ',' << format_edge(h.edges[k + 1]) << ',' << bins[k] << '\n';
    }
  }
  return os.str();
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

inline std::string dimension_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "dimension,n,correct,accuracy\n";
  for (const auto& [dim, c] : r.per_dimension) {
    os << dim << ',' << c.n << ',' << c.correct << ',' << csv_number(c.accuracy()) << '\n';
  }
  return os.str();
}

inline std::string rows_csv(const std::vector<DimensionRow>& rows, const std::string& baseline) {
  std::ostringstream os;
  if (rows.empty()) return "dimension,n\n";
  os << "dimension,n";
  for (const auto& [mode, _] : rows.front().accuracy) os << ',' << mode;
  for (const auto& [mode, _] : rows.front().delta) {
    if (mode != baseline) os << ',' << mode << "-" << baseline;
  }
  os << '\n';
  for (const auto& row : rows) {
    os << row.dimension << ',' << row.n;
    for (const auto& [_, v] : row.accuracy) os << ',' << csv_number(v);
    for (const auto& [mode, v] : row.delta) {
      if (mode != baseline) os << ',' << csv_number(v);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dualfocus
