#pragma once

#include <cstdio>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dualfocus/error.hpp"
#include "dualfocus/geometry.hpp"
#include "dualfocus/image.hpp"

namespace dualfocus {

inline constexpr std::string_view kBoxQueryPrefix =
    "Provide the box coordinates of the region this question is asking about: ";
inline constexpr std::string_view kMicroPrefix = "Combine these two images and answer the question: ";

enum class Role { User, Assistant };

constexpr std::string_view to_string(Role r) { return r == Role::User ? "user" : "assistant"; }

using ImageRef = std::shared_ptr<const ImageBuf>;

/// A text span or an image slot. Exactly one of the two is populated.
class Segment {
 public:
  enum class Kind { Text, Image };

  static Segment text(std::string s) { return Segment(Kind::Text, std::move(s), nullptr); }
  static Segment image(ImageRef img) {
    if (!img) throw Error(ErrorCode::InvalidArgument, "null image reference");
    return Segment(Kind::Image, {}, std::move(img));
  }

  Kind kind() const noexcept { return kind_; }
  bool is_text() const noexcept { return kind_ == Kind::Text; }
  bool is_image() const noexcept { return kind_ == Kind::Image; }
  const std::string& text_value() const noexcept { return text_; }
  const ImageRef& image_value() const noexcept { return image_; }

 private:
  Segment(Kind k, std::string t, ImageRef i) : kind_(k), text_(std::move(t)), image_(std::move(i)) {}

  Kind kind_;
  std::string text_;
  ImageRef image_;
};

struct Turn {
  Role role;
  std::vector<Segment> segments;
};

/// Which DualFocus request a context represents.
enum class PromptKind { Macro, BoxQuery, Micro, Other };

constexpr std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::Macro: return "macro";
    case PromptKind::BoxQuery: return "box_query";
    case PromptKind::Micro: return "micro";
    case PromptKind::Other: return "other";
  }
  return "other";
}

/// Ordered conversation handed to a backend. Roles alternate starting with
/// the user and images only appear in user turns.
class PromptContext {
 public:
  PromptContext() = default;

  void append(Turn turn) {
    const Role expected = turns_.size() % 2 == 0 ? Role::User : Role::Assistant;
    if (turn.role != expected) {
      throw Error(ErrorCode::MalformedContext, "roles must alternate starting with user");
    }
    if (turn.role == Role::Assistant) {
      for (const auto& s : turn.segments) {
        if (s.is_image()) {
          throw Error(ErrorCode::MalformedContext, "assistant turns cannot carry images");
        }
      }
    }
    turns_.push_back(std::move(turn));
  }

  const std::vector<Turn>& turns() const noexcept { return turns_; }

  std::vector<Segment::Kind> flattened_kinds() const {
    std::vector<Segment::Kind> kinds;
    for (const auto& t : turns_) {
      for (const auto& s : t.segments) kinds.push_back(s.kind());
    }
    return kinds;
  }

  std::vector<ImageRef> images() const {
    std::vector<ImageRef> out;
    for (const auto& t : turns_) {
      for (const auto& s : t.segments) {
        if (s.is_image()) out.push_back(s.image_value());
      }
    }
    return out;
  }

  /// Text of the last user turn (concatenated text segments).
  std::string last_user_text() const {
    for (auto it = turns_.rbegin(); it != turns_.rend(); ++it) {
      if (it->role != Role::User) continue;
      std::string out;
      for (const auto& s : it->segments) {
        if (s.is_text()) out += s.text_value();
      }
      return out;
    }
    return {};
  }

  PromptKind kind() const {
    const auto starts_with = [](const std::string& s, std::string_view p) {
      return s.compare(0, p.size(), p) == 0;
    };
    const std::string last = last_user_text();
    if (turns_.size() == 1) {
      return starts_with(last, kBoxQueryPrefix) ? PromptKind::BoxQuery : PromptKind::Macro;
    }
    if (turns_.size() == 3 && starts_with(last, kMicroPrefix)) return PromptKind::Micro;
    return PromptKind::Other;
  }

  /// Stable FNV-1a digest of roles, texts and image pixels.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (i * 8)) & 0xFF;
        h *= 1099511628211ULL;
      }
    };
    for (const auto& t : turns_) {
      mix(t.role == Role::User ? 1 : 2);
      for (const auto& s : t.segments) {
        if (s.is_text()) {
          mix(3);
          mix(s.text_value().size());
          for (unsigned char c : s.text_value()) {
            h ^= c;
            h *= 1099511628211ULL;
          }
        } else {
          mix(4);
          mix(s.image_value()->fingerprint());
        }
      }
    }
    return h;
  }

 private:
  std::vector<Turn> turns_;
};

namespace detail {

inline std::string trimmed_question(std::string_view q) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  std::size_t b = 0, e = q.size();
  while (b < e && ws(q[b])) ++b;
  while (e > b && ws(q[e - 1])) --e;
  if (b == e) throw Error(ErrorCode::EmptyQuestion, "question is empty");
  return std::string(q.substr(b, e - b));
}

inline PromptContext single_user_turn(ImageRef img, std::string text) {
  PromptContext ctx;
  ctx.append({Role::User, {Segment::image(std::move(img)), Segment::text(std::move(text))}});
  return ctx;
}

}  // namespace detail

/// Plain VQA request: [image, question].
inline PromptContext build_macro(ImageRef img, std::string_view question) {
  return detail::single_user_turn(std::move(img), detail::trimmed_question(question));
}

/// First DualFocus round: ask for the region the question refers to.
inline PromptContext build_box_query(ImageRef img, std::string_view question) {
  return detail::single_user_turn(std::move(img),
                                  std::string(kBoxQueryPrefix) + detail::trimmed_question(question));
}

/// Second DualFocus round. Appends the model's box reply and a user turn
/// carrying the zoomed sub-image, so the flattened order is
/// [image, box query, box reply, sub-image, question].
inline PromptContext extend_micro(const PromptContext& ctx, std::string box_answer_text,
                                  ImageRef sub_img, std::string_view question) {
  if (ctx.turns().size() != 1 || ctx.kind() != PromptKind::BoxQuery) {
    throw Error(ErrorCode::MalformedContext, "extend_micro expects a single-turn box query");
  }
  const std::string q = detail::trimmed_question(question);
  PromptContext out = ctx;
  out.append({Role::Assistant, {Segment::text(std::move(box_answer_text))}});
  out.append({Role::User,
              {Segment::image(std::move(sub_img)), Segment::text(std::string(kMicroPrefix) + q)}});
  return out;
}

/// "(x1, y1, x2, y2)" with fixed decimals.
inline std::string format_box(const NormBox& b, int decimals = 3) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "(%.*f, %.*f, %.*f, %.*f)", decimals, b.x1(), decimals, b.y1(),
                decimals, b.x2(), decimals, b.y2());
  return buf;
}

inline std::string format_pixel_box(const PixelBox& b) {
  return "(" + std::to_string(b.x1()) + ", " + std::to_string(b.y1()) + ", " +
         std::to_string(b.x2()) + ", " + std::to_string(b.y2()) + ")";
}

/// Four-message training conversation (Q1, A1, Q2, A2). `<image>` marks
/// where the full image and the zoomed sub-image are spliced in.
struct TrainingConversation {
  std::string q1;
  std::string a1;
  std::string q2;
  std::string a2;
};

inline constexpr std::string_view kImagePlaceholder = "<image>";

inline TrainingConversation curation_target(std::string_view question, std::string_view answer,
                                            std::string box_text) {
  const std::string q = detail::trimmed_question(question);
  return {std::string(kImagePlaceholder) + "\n" + std::string(kBoxQueryPrefix) + q,
          std::move(box_text),
          std::string(kImagePlaceholder) + "\n" + std::string(kMicroPrefix) + q,
          std::string(answer)};
}

inline TrainingConversation curation_target(std::string_view question, std::string_view answer,
                                            const NormBox& box, int decimals = 3) {
  return curation_target(question, answer, format_box(box, decimals));
}

}  // namespace dualfocus
