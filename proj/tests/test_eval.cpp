#include <random>

#include <gtest/gtest.h>

#include "dualfocus/eval.hpp"
#include "support.hpp"

using namespace dualfocus;
using dftest::fixture;

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

EvalItem mc_item(std::string gold = "B") {
  EvalItem it;
  it.item_id = "mc";
  it.question = "Which car?";
  it.options = {{"A", "blue car"}, {"B", "red car"}, {"C", "green car"}, {"D", "white van"}};
  it.gold = std::move(gold);
  return it;
}

EvalItem yes_no(std::string id, bool gold, PopeSplit split) {
  EvalItem it;
  it.item_id = std::move(id);
  it.question = "Is there a dog in the image?";
  it.gold = gold ? "yes" : "no";
  it.tags.benchmark = "pope";
  it.tags.pope_split = split;
  return it;
}

PipelineConfig mode_config(Mode m, int parallelism = 1) {
  PipelineConfig cfg;
  cfg.mode = m;
  cfg.parallelism = parallelism;
  cfg.zoom.interpolation = Interpolation::Nearest;
  cfg.ensemble = {{"plain", "", nullptr}, {"letter", "\nAnswer with the option's letter.", nullptr}};
  return cfg;
}

}  // namespace

TEST(MatchAnswer, Examples) {
  EXPECT_TRUE(match_answer("B", mc_item()).correct);
  const auto m = match_answer("The answer is (b) red car.", mc_item());
  EXPECT_TRUE(m.correct);
  EXPECT_EQ(m.method, MatchMethod::Letter);
  EXPECT_FALSE(match_answer("maybe", mc_item()).correct);
  EXPECT_EQ(match_answer("maybe", mc_item()).method, MatchMethod::None);
}

TEST(MatchAnswer, LetterExtractionRules) {
  const auto opts = mc_item().options;
  EXPECT_EQ(extract_option_letter("B.", opts), "B");
  EXPECT_EQ(extract_option_letter("b", opts), "B");
  EXPECT_EQ(extract_option_letter("(C) green car", opts), "C");
  EXPECT_EQ(extract_option_letter("Answer: D", opts), "D");
  EXPECT_EQ(extract_option_letter("A red car is parked, so B", opts), "B");
  EXPECT_EQ(extract_option_letter("a red car", opts), std::nullopt);
  EXPECT_EQ(extract_option_letter("BMW", opts), std::nullopt);
  EXPECT_EQ(extract_option_letter("E", opts), std::nullopt);
}

TEST(MatchAnswer, OptionTextFallbackIsFuzzy) {
  const auto m = match_answer("Red car!", mc_item());
  EXPECT_TRUE(m.correct);
  EXPECT_TRUE(m.fuzzy());
  EXPECT_FALSE(match_answer("white van", mc_item()).correct);
}

TEST(MatchAnswer, OpenEnded) {
  EvalItem it;
  it.item_id = "o";
  it.question = "What is written?";
  it.gold = "Stop sign";
  EXPECT_TRUE(match_answer("stop, sign.", it).correct);
  EXPECT_FALSE(match_answer("stop", it).correct);
  EXPECT_FALSE(match_answer("", it).correct);
}

TEST(EvalItems, LoadAndValidate) {
  const auto items = load_eval_items(fixture("bench_items.jsonl"));
  ASSERT_EQ(items.size(), 20u);
  EXPECT_EQ(items[0].tags.dimension, "detail");
  EXPECT_EQ(items[19].gold, "C");
  auto j = to_json(items[0]);
  j["gold"] = "Z";
  try {
    eval_item_from_json(j, 7);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), "gold");
    EXPECT_EQ(e.record_index(), 7u);
  }
}

TEST(Pope, WorkedCase) {
  const auto m = pope_from_counts({9, 1, 1, 9, 0});
  EXPECT_DOUBLE_EQ(m.f1, 0.9);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.9);
}

TEST(Pope, AllCorrect) {
  std::vector<EvalItem> items;
  std::vector<std::string> preds;
  for (int i = 0; i < 10; ++i) {
    items.push_back(yes_no("p" + std::to_string(i), i % 2 == 0, PopeSplit::Adversarial));
    preds.push_back(i % 2 == 0 ? "Yes, there is." : "No.");
  }
  const auto m = pope_metrics(items, preds);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.at("adversarial").f1, 1.0);
  EXPECT_EQ(m.at("adversarial").accuracy, 1.0);
}

TEST(Pope, EmptySplit) {
  const std::vector<EvalItem> items = {yes_no("a", true, PopeSplit::Random)};
  const std::vector<std::string> preds = {"yes"};
  EXPECT_EQ(code_of([&] { pope_split_metrics(items, preds, PopeSplit::Popular); }), ErrorCode::EmptySplit);
}

TEST(Pope, UnparseableCountsAsNoAndIsFlagged) {
  const std::vector<EvalItem> items = {yes_no("a", true, PopeSplit::Random), yes_no("b", false, PopeSplit::Random)};
  const std::vector<std::string> preds = {"I am not sure", "hmm"};
  const auto c = pope_counts(items, preds, PopeSplit::Random);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_EQ(c.unparseable, 2u);
}

TEST(Pope, RandomConfusionsMatchCountingOracle) {
  std::mt19937 rng(1234);
  std::uniform_int_distribution<int> n(1, 60);
  std::bernoulli_distribution coin(0.5);
  for (int draw = 0; draw < 100; ++draw) {
    std::vector<EvalItem> items;
    std::vector<std::string> preds;
    int tp = 0, fp = 0, fn = 0, tn = 0;
    const int count = n(rng);
    for (int i = 0; i < count; ++i) {
      const bool g = coin(rng), p = coin(rng);
      items.push_back(yes_no(std::to_string(i), g, PopeSplit::Popular));
      preds.push_back(p ? "yes" : "no");
      (g ? (p ? tp : fn) : (p ? fp : tn))++;
    }
    const auto m = pope_split_metrics(items, preds, PopeSplit::Popular);
    const int den = 2 * tp + fp + fn;
    ASSERT_EQ(m.f1, den == 0 ? 0.0 : static_cast<double>(2 * tp) / den);
    ASSERT_EQ(m.accuracy, static_cast<double>(tp + tn) / count);
  }
}

TEST(DimensionBreakdown, TwoDimensionsExactRates) {
  const std::vector<std::string> dims = {"attr", "attr", "attr", "attr", "scene", "scene"};
  const std::map<std::string, std::vector<bool>> correct = {
      {"macro", {true, false, false, false, true, true}},
      {"dual", {true, true, true, false, true, false}}};
  const auto rows = dimension_breakdown(dims, correct, "macro");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].dimension, "attr");
  EXPECT_EQ(rows[0].n, 4u);
  EXPECT_DOUBLE_EQ(rows[0].accuracy.at("macro"), 0.25);
  EXPECT_DOUBLE_EQ(rows[0].accuracy.at("dual"), 0.75);
  EXPECT_DOUBLE_EQ(rows[0].delta.at("dual"), 0.5);
  EXPECT_DOUBLE_EQ(rows[1].accuracy.at("dual"), 0.5);
  EXPECT_DOUBLE_EQ(rows[1].delta.at("dual"), 0.5 - 1.0);
}

TEST(DimensionBreakdown, SingleDimensionEqualsOverall) {
  const std::vector<std::string> dims(5, "all");
  const std::map<std::string, std::vector<bool>> correct = {{"macro", {true, false, true, true, false}}};
  const auto rows = dimension_breakdown(dims, correct, "macro");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].accuracy.at("macro"), 0.6);
}

TEST(RunBenchmark, BenchOrdering) {
  const auto items = load_eval_items(fixture("bench_items.jsonl"));
  const auto backend = dftest::bench_backend();
  const auto resolve = file_image_resolver(fixture(""));
  std::map<Mode, std::size_t> correct;
  for (Mode m : {Mode::Macro, Mode::Micro, Mode::Dual}) {
    const auto run = run_benchmark(items, backend, mode_config(m), resolve);
    correct[m] = run.scored.report.correct;
    EXPECT_EQ(run.scored.report.total, 20u);
    EXPECT_EQ(run.scored.report.failed, 0u);
    ASSERT_TRUE(run.scored.report.manifest);
  }
  EXPECT_EQ(correct[Mode::Macro], 8u);
  EXPECT_EQ(correct[Mode::Micro], 12u);
  EXPECT_EQ(correct[Mode::Dual], 20u);
}

TEST(RunBenchmark, DualChoiceAlwaysLowerPpl) {
  const auto items = load_eval_items(fixture("bench_items.jsonl"));
  const auto run = run_benchmark(items, dftest::bench_backend(), mode_config(Mode::Dual), file_image_resolver(fixture("")));
  for (const auto& r : run.batch.results) {
    ASSERT_TRUE(r.macro && r.micro);
    const auto& chosen = r.chosen == r.macro->text ? *r.macro : *r.micro;
    const auto& other = r.chosen == r.macro->text ? *r.micro : *r.macro;
    EXPECT_LE(chosen.ppl, other.ppl) << r.item_id;
  }
}

TEST(RunBenchmark, EnsembleUsesBothPrompts) {
  MockScript s;
  s.rules.push_back({match_prompt(PromptKind::Macro, "option's letter"), canned("B", {-0.1})});
  s.rules.push_back({match_prompt(PromptKind::Macro, ""), canned("blue car", {-0.9, -0.9})});
  const MockBackend b(std::move(s));
  auto items = std::vector<EvalItem>{mc_item()};
  items[0].image = "scene.png";
  const auto run = run_benchmark(items, b, mode_config(Mode::Ensemble), file_image_resolver(fixture("")));
  const auto& r = run.batch.results[0];
  ASSERT_EQ(r.candidates.size(), 2u);
  EXPECT_EQ(r.chosen_index, 1u);
  EXPECT_EQ(r.chosen, "B");
  EXPECT_EQ(run.scored.report.correct, 1u);
}

TEST(RunBenchmark, FailuresScoredIncorrectAndCounted) {
  auto items = load_eval_items(fixture("bench_items.jsonl"));
  items[4].image = "missing.png";
  const auto run = run_benchmark(items, dftest::bench_backend(), mode_config(Mode::Dual, 4), file_image_resolver(fixture("")));
  EXPECT_EQ(run.scored.report.failed, 1u);
  EXPECT_EQ(run.scored.report.correct, 19u);
  EXPECT_EQ(run.scored.report.total, 20u);
  EXPECT_FALSE(run.scored.items[4].correct);
}

TEST(RunBenchmark, EmptyItemsRejected) {
  const MockBackend b(MockScript{});
  EXPECT_EQ(code_of([&] { run_benchmark({}, b, mode_config(Mode::Dual), file_image_resolver(".")); }),
            ErrorCode::InvalidArgument);
}

TEST(ResultsFile, RescoringReproducesReportBitForBit) {
  auto items = load_eval_items(fixture("bench_items.jsonl"));
  items[2].image = "missing.png";
  const auto run = run_benchmark(items, dftest::bench_backend(), mode_config(Mode::Dual), file_image_resolver(fixture("")));
  dftest::TempDir dir;
  std::string text;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto j = results_line(items[i], run.batch.results[i], run.scored.items[i]);
    j["config_hash"] = "feedface";
    text += j.dump() + "\n";
  }
  dftest::write_text(dir / "r.jsonl", text);
  const auto file = read_results(dir / "r.jsonl");
  EXPECT_EQ(file.mode, "dual");
  EXPECT_EQ(file.config_hash, "feedface");
  const auto again = score_results(file.items, file.results, file.mode);
  auto a = to_json(run.scored.report);
  a.erase("manifest");
  a["config_hash"] = "";
  EXPECT_EQ(to_json(again.report).dump(), a.dump());
}

TEST(ResultsFile, MalformedLineReportsLineNumber) {
  dftest::TempDir dir;
  const auto items = load_eval_items(fixture("bench_items.jsonl"));
  const auto run = run_benchmark(std::span(items).subspan(0, 2), dftest::bench_backend(), mode_config(Mode::Macro),
                                 file_image_resolver(fixture("")));
  const std::string good = results_line(items[0], run.batch.results[0], run.scored.items[0]).dump();
  dftest::write_text(dir / "bad.jsonl", good + "\n" + good + "\n{oops\n");
  try {
    read_results(dir / "bad.jsonl");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.record_index(), 3u);
  }
}

TEST(PplGap, HistogramByTag) {
  const auto items = load_eval_items(fixture("bench_items.jsonl"));
  const auto run = run_benchmark(items, dftest::bench_backend(), mode_config(Mode::Dual), file_image_resolver(fixture("")));
  const auto h = ppl_gap_histogram(items, run.batch.results);
  // detail: e^1.2 - e^0.2 > 0 for all 12; global: e^0.1 - e^0.9 < 0 for all 8.
  EXPECT_EQ(h.micro_lower.at("detail"), 12u);
  EXPECT_EQ(h.micro_lower.at("global"), 0u);
  std::size_t total = 0;
  for (auto c : h.counts.at("detail")) total += c;
  EXPECT_EQ(total, 12u);
  EXPECT_NEAR(h.mean_gap.at("global"), std::exp(0.1) - std::exp(0.9), 1e-12);
  EXPECT_NE(gap_histogram_csv(h).find("detail,2,inf,12"), std::string::npos);
}
