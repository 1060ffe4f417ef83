#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/error.hpp"
#include "dualfocus/geometry.hpp"
#include "dualfocus/parallel.hpp"
#include "dualfocus/prompting.hpp"

namespace dualfocus {

struct VgRegion {
  std::string description;
  PixelBox box;
};

/// One Visual-Genome-style QA sample with the region annotations of its image.
struct VgRecord {
  std::string image_id;
  std::string image;  // optional image path, passed through to the output
  int image_w = 0;
  int image_h = 0;
  std::string question;
  std::string answer;
  PixelBox qa_box{0, 0, 1, 1, 1, 1};
  std::vector<VgRegion> regions;
};

enum class BoxFormat { Normalized, Pixel };

struct CurationConfig {
  double iou_threshold = 0.5;
  BoxFormat box_format = BoxFormat::Normalized;
  int decimals = 3;
  int parallelism = 1;
};

// ------------------------------------------------------------- ingestion

namespace detail {

inline PixelBox vg_box(const nlohmann::json& j, int w, int h) {
  int x1, y1, x2, y2;
  if (j.is_array()) {
    if (j.size() != 4) throw std::invalid_argument("box array needs four values");
    x1 = j[0].get<int>();
    y1 = j[1].get<int>();
    x2 = j[2].get<int>();
    y2 = j[3].get<int>();
  } else if (j.is_object()) {
    x1 = j.at("x").get<int>();
    y1 = j.at("y").get<int>();
    x2 = x1 + (j.contains("w") ? j["w"].get<int>() : j.at("width").get<int>());
    y2 = y1 + (j.contains("h") ? j["h"].get<int>() : j.at("height").get<int>());
  } else {
    throw std::invalid_argument("box must be [x1, y1, x2, y2] or {x, y, w, h}");
  }
  return {x1, y1, x2, y2, w, h};
}

template <typename Fn>
auto field(std::size_t index, const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(index, name, e.what());
  }
}

}  // namespace detail

/// Validates one ingestion record. Field names follow the documented schema:
/// image_id, image_w, image_h, question, answer, qa_box, optional image,
/// optional regions [{description, box}].
inline VgRecord parse_vg_record(const nlohmann::json& j, std::size_t index) {
  if (!j.is_object()) throw SchemaError(index, "<record>", "record must be a JSON object");
  const auto require = [&](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) throw SchemaError(index, name, "missing");
    return j[name];
  };
  VgRecord r;
  r.image_id = detail::field(index, "image_id", [&] {
    const auto& v = require("image_id");
    return v.is_string() ? v.get<std::string>() : std::to_string(v.get<long long>());
  });
  r.image_w = detail::field(index, "image_w", [&] { return require("image_w").get<int>(); });
  r.image_h = detail::field(index, "image_h", [&] { return require("image_h").get<int>(); });
  if (r.image_w < 1) throw SchemaError(index, "image_w", "must be >= 1");
  if (r.image_h < 1) throw SchemaError(index, "image_h", "must be >= 1");
  r.question = detail::field(index, "question", [&] { return require("question").get<std::string>(); });
  r.answer = detail::field(index, "answer", [&] { return require("answer").get<std::string>(); });
  r.qa_box = detail::field(index, "qa_box", [&] { return detail::vg_box(require("qa_box"), r.image_w, r.image_h); });
  r.image = detail::field(index, "image", [&] { return j.value("image", std::string()); });
  if (j.contains("regions")) {
    const auto& regions = j["regions"];
    if (!regions.is_array()) throw SchemaError(index, "regions", "must be an array");
    for (std::size_t k = 0; k < regions.size(); ++k) {
      const std::string prefix = "regions[" + std::to_string(k) + "]";
      const auto& reg = regions[k];
      std::string desc = detail::field(index, prefix + ".description", [&] {
        return reg.contains("description") ? reg.at("description").get<std::string>()
                                           : reg.at("phrase").get<std::string>();
      });
      PixelBox box = detail::field(index, prefix + ".box", [&] {
        return detail::vg_box(reg.contains("box") ? reg.at("box") : reg, r.image_w, r.image_h);
      });
      r.regions.push_back({std::move(desc), box});
    }
  }
  return r;
}

/// One element of a load_vg stream: a record or its schema error.
struct VgEntry {
  std::size_t index = 0;
  std::optional<VgRecord> record;
  std::optional<SchemaError> error;
};

/// Streams records from a JSON array file or a JSONL file. Malformed records
/// come back as entries carrying a SchemaError; the stream continues.
class VgReader {
 public:
  explicit VgReader(const std::filesystem::path& path) : in_(path) {
    if (!in_) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    // A leading '[' means a single JSON array document.
    char c = 0;
    while (in_.get(c)) {
      if (!std::isspace(static_cast<unsigned char>(c))) break;
    }
    if (!in_) return;  // empty file
    in_.unget();
    if (c == '[') {
      nlohmann::json doc;
      try {
        in_ >> doc;
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(0, "<document>", e.what());
      }
      array_ = std::move(doc);
    }
  }

  std::optional<VgEntry> next() {
    if (array_) {
      if (array_pos_ >= array_->size()) return std::nullopt;
      const std::size_t i = array_pos_++;
      return make_entry(i, [&] { return (*array_)[i]; });
    }
    std::string line;
    while (std::getline(in_, line)) {
      if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
      const std::size_t i = index_++;
      return make_entry(i, [&] { return nlohmann::json::parse(line); });
    }
    return std::nullopt;
  }

 private:
  template <typename Get>
  static VgEntry make_entry(std::size_t i, Get&& get) {
    VgEntry e{i, {}, {}};
    try {
      e.record = parse_vg_record(get(), i);
    } catch (const SchemaError& err) {
      e.error = err;
    } catch (const nlohmann::json::exception& err) {
      e.error = SchemaError(i, "<record>", err.what());
    }
    return e;
  }

  std::ifstream in_;
  std::optional<nlohmann::json> array_;
  std::size_t array_pos_ = 0;
  std::size_t index_ = 0;
};

inline VgReader load_vg(const std::filesystem::path& path) { return VgReader(path); }

// ---------------------------------------------------------- filtration

/// Version tag of the stopword list and stemming rules below.
inline constexpr std::string_view kLexiconVersion = "df-lexicon-1";

inline const std::set<std::string, std::less<>>& stopwords() {
  static const std::set<std::string, std::less<>> words = {
      // function words
      "a", "an", "the", "this", "that", "these", "those", "there", "here", "is", "are", "was",
      "were", "be", "been", "being", "am", "do", "does", "did", "has", "have", "had", "can",
      "could", "will", "would", "should", "may", "might", "must", "shall", "of", "in", "on",
      "at", "to", "for", "from", "by", "with", "without", "about", "above", "below", "under",
      "over", "into", "onto", "near", "next", "behind", "between", "beside", "inside",
      "outside", "through", "across", "around", "front", "back", "top", "bottom", "left",
      "right", "side", "and", "or", "but", "not", "no", "yes", "it", "its", "they", "them",
      "their", "he", "him", "his", "she", "her", "hers", "we", "our", "you", "your", "i", "me",
      "my", "one", "ones", "some", "any", "all", "each", "other", "another", "such", "so",
      "than", "too", "very", "up", "down", "out", "off", "as", "if", "then", "also", "just",
      // question words
      "what", "which", "who", "whom", "whose", "where", "when", "why", "how",
      // attribute and framing words that name no object
      "color", "colour", "colors", "kind", "type", "shape", "size", "many", "much", "number",
      "picture", "image", "photo", "photograph", "scene", "shown", "visible", "made",
      "material", "pattern", "style", "part", "thing", "things", "object", "item",
      // frequent verbs in VG questions
      "wearing", "worn", "holding", "held", "sitting", "standing", "doing", "looking", "eating",
      "riding", "playing", "walking", "carrying", "parked", "used", "hanging", "lying",
      "laying", "flying", "covering", "covered", "showing", "using", "taking", "taken",
      "located", "seen", "happening", "going"};
  return words;
}

/// Plural folding: irregular table, then -ies, -sses, -ches/-shes/-xes/-zes, -s.
inline std::string stem(std::string w) {
  static const std::map<std::string, std::string, std::less<>> irregular = {
      {"men", "man"},       {"women", "woman"}, {"people", "person"}, {"children", "child"},
      {"feet", "foot"},     {"teeth", "tooth"}, {"mice", "mouse"},    {"geese", "goose"},
      {"leaves", "leaf"},   {"knives", "knife"}, {"wolves", "wolf"},  {"shelves", "shelf"}};
  if (const auto it = irregular.find(w); it != irregular.end()) return it->second;
  const auto ends = [&](std::string_view suffix) {
    return w.size() > suffix.size() && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (w.size() > 4 && ends("ies")) return w.substr(0, w.size() - 3) + "y";
  if (ends("sses")) return w.substr(0, w.size() - 2);
  if (w.size() > 4 && (ends("ches") || ends("shes") || ends("xes") || ends("zes"))) {
    return w.substr(0, w.size() - 2);
  }
  if (w.size() > 3 && ends("s") && !ends("ss") && !ends("us") && !ends("is")) {
    return w.substr(0, w.size() - 1);
  }
  return w;
}

/// Lowercased alphabetic words (apostrophes split words), stemmed.
inline std::vector<std::string> lexical_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(stem(std::move(cur)));
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u)) {
      cur += static_cast<char>(std::tolower(u));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

/// Content words of a question: tokens of two or more letters that are not
/// stopwords (checked before and after stemming).
inline std::vector<std::string> content_nouns(std::string_view question) {
  std::vector<std::string> out;
  std::string cur;
  std::vector<std::string> raw;
  for (char c : question) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u)) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      raw.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) raw.push_back(std::move(cur));
  const auto& stop = stopwords();
  for (auto& w : raw) {
    if (w.size() < 2 || stop.contains(w)) continue;
    std::string s = stem(w);
    if (stop.contains(s)) continue;
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  }
  return out;
}

struct FilterVerdict {
  bool kept = true;
  std::string reason;                    // empty when kept
  std::vector<std::size_t> matching;     // indices into record.regions
};

inline constexpr std::string_view kDropMultipleReferents = "multiple_referents";
inline constexpr std::string_view kDropDegenerateBox = "degenerate_box";
inline constexpr std::string_view kDropSchemaError = "schema_error";

/// Drops a record when two region annotations that lexically match the
/// question's content nouns overlap by less than `iou_threshold`, i.e. the
/// question could be about two different objects.
inline FilterVerdict filter_ambiguous(const VgRecord& rec, const CurationConfig& cfg = {}) {
  FilterVerdict v;
  const auto nouns = content_nouns(rec.question);
  if (nouns.empty()) return v;
  for (std::size_t i = 0; i < rec.regions.size(); ++i) {
    const auto words = lexical_tokens(rec.regions[i].description);
    const bool hit = std::any_of(nouns.begin(), nouns.end(), [&](const std::string& n) {
      return std::find(words.begin(), words.end(), n) != words.end();
    });
    if (hit) v.matching.push_back(i);
  }
  for (std::size_t a = 0; a < v.matching.size(); ++a) {
    for (std::size_t b = a + 1; b < v.matching.size(); ++b) {
      if (iou(rec.regions[v.matching[a]].box, rec.regions[v.matching[b]].box) < cfg.iou_threshold) {
        v.kept = false;
        v.reason = std::string(kDropMultipleReferents);
        return v;
      }
    }
  }
  return v;
}

// ---------------------------------------------------------- reformatting

struct CurationRecord {
  VgRecord source;
  FilterVerdict verdict;
  std::optional<NormBox> norm_box;
  std::optional<TrainingConversation> conversation;  // present iff kept
};

/// Rounds each coordinate to the emitted precision. Throws DegenerateBox when
/// the rounded box is empty.
inline NormBox quantize(const NormBox& b, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const auto q = [&](double v) { return std::round(v * scale) / scale; };
  return {q(b.x1()), q(b.y1()), q(b.x2()), q(b.y2())};
}

/// Builds the four-message training conversation for a kept record.
inline CurationRecord reformat(const VgRecord& rec, const CurationConfig& cfg = {}) {
  CurationRecord out{rec, {}, {}, {}};
  const NormBox emitted = quantize(normalize(rec.qa_box), cfg.decimals);
  out.norm_box = emitted;
  std::string box_text = cfg.box_format == BoxFormat::Normalized ? format_box(emitted, cfg.decimals)
                                                                 : format_pixel_box(rec.qa_box);
  out.conversation = curation_target(rec.question, rec.answer, std::move(box_text));
  return out;
}

inline nlohmann::json to_json(const TrainingConversation& c) {
  return nlohmann::json::array({{{"from", "human"}, {"value", c.q1}},
                                {{"from", "gpt"}, {"value", c.a1}},
                                {{"from", "human"}, {"value", c.q2}},
                                {{"from", "gpt"}, {"value", c.a2}}});
}

inline nlohmann::json curated_line(const CurationRecord& r, std::size_t index) {
  const auto& b = *r.norm_box;
  return {{"id", "df-" + std::to_string(index)},
          {"image_id", r.source.image_id},
          {"image", r.source.image},
          {"box", {b.x1(), b.y1(), b.x2(), b.y2()}},
          {"conversations", to_json(*r.conversation)}};
}

struct CurationSummary {
  std::size_t total = 0;
  std::size_t kept = 0;
  std::map<std::string, std::size_t> dropped_by_reason;

  std::size_t dropped() const {
    std::size_t n = 0;
    for (const auto& [_, c] : dropped_by_reason) n += c;
    return n;
  }

  friend bool operator==(const CurationSummary&, const CurationSummary&) = default;
};

inline nlohmann::json to_json(const CurationSummary& s) {
  return {{"total", s.total},
          {"kept", s.kept},
          {"dropped", s.dropped()},
          {"dropped_by_reason", s.dropped_by_reason},
          {"lexicon", kLexiconVersion}};
}

/// Filters and reformats every record of `input`, writing kept conversations
/// to `output` as JSONL in input order. Records are processed in parallel in
/// chunks; the output is identical for any parallelism.
inline CurationSummary curate_all(const std::filesystem::path& input, const std::filesystem::path& output,
                                  const CurationConfig& cfg = {}) {
  VgReader reader(input);
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + output.string());

  struct Outcome {
    std::string line;
    std::string dropped;
  };
  CurationSummary summary;
  constexpr std::size_t kChunk = 1024;
  bool done = false;
  while (!done) {
    std::vector<VgEntry> chunk;
    while (chunk.size() < kChunk) {
      auto e = reader.next();
      if (!e) {
        done = true;
        break;
      }
      chunk.push_back(std::move(*e));
    }
    const auto outcomes = parallel_map_ordered(chunk.size(), cfg.parallelism, [&](std::size_t i) {
      const VgEntry& e = chunk[i];
      if (e.error) return Outcome{{}, std::string(kDropSchemaError)};
      const FilterVerdict verdict = filter_ambiguous(*e.record, cfg);
      if (!verdict.kept) return Outcome{{}, verdict.reason};
      try {
        return Outcome{curated_line(reformat(*e.record, cfg), e.index).dump(), {}};
      } catch (const Error& err) {
        if (err.code() != ErrorCode::DegenerateBox) throw;
        return Outcome{{}, std::string(kDropDegenerateBox)};
      }
    });
    for (const auto& o : outcomes) {
      ++summary.total;
      if (o.dropped.empty()) {
        ++summary.kept;
        out << o.line << '\n';
      } else {
        ++summary.dropped_by_reason[o.dropped];
      }
    }
  }
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + output.string());
  return summary;
}

}  // namespace dualfocus
