#include <random>

#include <gtest/gtest.h>

#include "dualfocus/boxparse.hpp"
#include "dualfocus/prompting.hpp"
#include "support.hpp"

using namespace dualfocus;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(ParseBox, NormalizedDirectRead) {
  const auto r = parse_box("(0.12, 0.30, 0.55, 0.88)", 640, 480);
  EXPECT_EQ(r.mode, CoordinateMode::Normalized);
  EXPECT_EQ(r.box, NormBox(0.12, 0.30, 0.55, 0.88));
}

TEST(ParseBox, PixelModeDividesByDims) {
  const std::string text = "The region is [34, 50, 120, 200].";
  const auto r = parse_box(text, 448, 448);
  EXPECT_EQ(r.mode, CoordinateMode::Pixel);
  EXPECT_NEAR(r.box.x1(), 0.0759, 5e-5);
  EXPECT_NEAR(r.box.y1(), 0.1116, 5e-5);
  EXPECT_NEAR(r.box.x2(), 0.2679, 5e-5);
  EXPECT_NEAR(r.box.y2(), 0.4464, 5e-5);
  EXPECT_EQ(text.substr(r.span_begin, r.span_end - r.span_begin), "34, 50, 120, 200");
}

TEST(ParseBox, NoNumbers) {
  EXPECT_EQ(code_of([] { parse_box("I cannot locate the object.", 10, 10); }), ErrorCode::NoCoordinates);
}

TEST(ParseBox, SixUndelimitedNumbers) {
  EXPECT_EQ(code_of([] { parse_box("boxes: 1, 2, 3, 4, 5, 6", 10, 10); }), ErrorCode::AmbiguousCount);
}

TEST(ParseBox, SpanCoversExactlyFourNumbers) {
  const std::string text = "Sure, here: (0.1, 0.2, 0.3, 0.4) done";
  const auto r = parse_box(text, 10, 10);
  EXPECT_EQ(text.substr(r.span_begin, r.span_end - r.span_begin), "0.1, 0.2, 0.3, 0.4");
}

TEST(ParseBox, Deterministic) {
  const std::string text = "Box [12, 40, 300, 220] maybe";
  const auto a = parse_box(text, 640, 480);
  for (int i = 0; i < 50; ++i) {
    const auto b = parse_box(text, 640, 480);
    ASSERT_EQ(a.box, b.box);
    ASSERT_EQ(a.span_begin, b.span_begin);
    ASSERT_EQ(a.mode, b.mode);
  }
}

TEST(ParseBoxCorpus, AllCasesPass) {
  const auto corpus = dftest::read_json(dftest::fixture("boxparse_corpus.json"));
  std::size_t passed = 0;
  for (const auto& c : corpus.at("cases")) {
    SCOPED_TRACE(c.at("name").get<std::string>());
    const std::string text = c.at("text");
    const int w = c.at("w"), h = c.at("h");
    const std::string expect = c.at("expect");
    if (expect == "ok") {
      const auto r = parse_box(text, w, h);
      const auto want = c.at("box").get<std::vector<double>>();
      const auto got = r.box.coords();
      for (int k = 0; k < 4; ++k) ASSERT_NEAR(got[k], want[k], 1e-12);
      ASSERT_EQ(std::string(to_string(r.mode)), c.at("mode").get<std::string>());
    } else {
      ASSERT_EQ(std::string(to_string(code_of([&] { parse_box(text, w, h); }))), expect);
    }
    ++passed;
  }
  EXPECT_EQ(passed, 40u);
}

TEST(ParseBox, RoundTripsFormatBox) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    if (std::abs(a - b) < 2e-3 || std::abs(c - d) < 2e-3) continue;
    const NormBox box(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d));
    const auto r = parse_box(format_box(box), 1000, 1000);
    ASSERT_EQ(r.mode, CoordinateMode::Normalized);
    for (int k = 0; k < 4; ++k) ASSERT_NEAR(r.box.coords()[k], box.coords()[k], 5e-4) << format_box(box);
  }
}
