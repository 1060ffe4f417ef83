// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "dualfocus/boxparse.hpp"
#include "dualfocus/curate.hpp"
#include "dualfocus/eval.hpp"
#include "support.hpp"

using namespace dualfocus;
using dftest::fixture;

namespace {

// A check returns an empty string on success, otherwise a failure detail.
using Check = std::function<std::string()>;

int failures = 0;

void run(const char* name, double budget_s, const Check& check) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  try {
    detail = check();
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (detail.empty() && secs > budget_s) {
    detail = "took " + std::to_string(secs) + " s, budget " + std::to_string(budget_s) + " s";
  }
  std::printf("%s %s (%.3f s)%s%s\n", detail.empty() ? "PASS" : "FAIL", name, secs, detail.empty() ? "" : ": ",
              detail.c_str());
  if (!detail.empty()) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Neumaier-compensated sum in long double.
double oracle_ppl(const std::vector<double>& lps) {
  long double sum = 0.0L, comp = 0.0L;
  for (double v : lps) {
    const long double t = sum + v;
    if (std::fabs(static_cast<double>(sum)) >= std::fabs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return static_cast<double>(std::exp(-(sum + comp) / static_cast<long double>(lps.size())));
}

ScoredAnswer with_ppl(std::string text, double ppl) {
  ScoredAnswer a;
  a.text = std::move(text);
  a.ppl = ppl;
  return a;
}

std::string perplexity_check() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 128);
  std::uniform_real_distribution<double> lp(-15.0, 0.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v(len(rng));
    for (auto& x : v) x = lp(rng);
    const double want = oracle_ppl(v), got = perplexity(v);
    if (std::abs(got - want) > 1e-12 * want) return fmt("vector %d: got %.17g want %.17g", i, got, want);
  }
  if (perplexity(std::vector<double>{0.0}) != 1.0) return "[0.0] != 1";
  const double e = perplexity(std::vector<double>{-0.5, -1.5});
  if (std::abs(e - std::exp(1.0)) > 1e-12 * std::exp(1.0)) return fmt("[-0.5,-1.5] gave %.17g", e);
  return {};
}

std::string selection_check() {
  std::vector<double> grid;
  for (int i = 0; i < 10; ++i) grid.push_back(1.0 + 0.37 * i);
  for (double pm : grid) {
    for (double pu : grid) {
      const auto s = select(with_ppl("macro", pm), with_ppl("micro", pu));
      const bool want_macro = pm < pu;
      if ((s.chosen == "macro") != want_macro) return fmt("macro %.3f micro %.3f picked %s", pm, pu, s.chosen.c_str());
    }
  }
  for (double p : {1.0, 1.5, 2.718281828459045, 1e6}) {
    const auto s = select(with_ppl("macro", p), with_ppl("micro", p));
    if (s.chosen != "micro" || s.reason != SelectionReason::MicroLowerPpl) return fmt("tie at %.3f picked macro", p);
  }
  return {};
}

std::string geometry_check() {
  const auto l = letterbox_layout(100, 50, 336);
  if (l.content_w != 336 || l.content_h != 168 || l.offset_x != 0 || l.offset_y != 84) {
    return fmt("100x50 layout %dx%d at (%d,%d)", l.content_w, l.content_h, l.offset_x, l.offset_y);
  }
  // The 100x50 crop of a 200x100 image, zoomed to 336 with 84-pixel pads.
  ImageBuf src(200, 100, 0);
  for (int y = 25; y < 75; ++y)
    for (int x = 50; x < 150; ++x) src.set(x, y, 10, 20, 30);
  const auto cropped = crop(src, NormBox(0.25, 0.25, 0.75, 0.75));
  if (cropped.width() != 100 || cropped.height() != 50) return "crop extent wrong";
  for (auto interp : {Interpolation::Nearest, Interpolation::Bilinear}) {
    const auto out = zoom(cropped, {336, interp, 127});
    if (out.width() != 336 || out.height() != 336) return "zoom output not 336x336";
    for (int y = 0; y < 336; ++y) {
      for (int x = 0; x < 336; ++x) {
        const bool pad = y < 84 || y >= 252;
        const auto* p = out.pixel(x, y);
        const bool ok = pad ? (p[0] == 127 && p[1] == 127 && p[2] == 127) : (p[0] == 10 && p[1] == 20 && p[2] == 30);
        if (!ok) return fmt("pixel (%d,%d) wrong", x, y);
      }
    }
  }
  // Sentinel poisoning: pixels outside the box are (255,0,255), which no
  // in-box value or blend of in-box values can produce.
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> dim(8, 300);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t reads = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int w = dim(rng), h = dim(rng);
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    if (std::abs(a - b) * w < 2 || std::abs(c - d) * h < 2) continue;
    const NormBox box(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d));
    const PixelBox pb = denormalize(box, w, h);
    ImageBuf img(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (x >= pb.x1() && x < pb.x2() && y >= pb.y1() && y < pb.y2()) {
          img.set(x, y, static_cast<std::uint8_t>((x * 3 + y) % 200), static_cast<std::uint8_t>(1 + (x + y) % 200),
                  static_cast<std::uint8_t>((x ^ y) % 200));
        } else {
          img.set(x, y, 255, 0, 255);
        }
      }
    }
    for (auto interp : {Interpolation::Nearest, Interpolation::Bilinear}) {
      const auto out = zoom(crop(img, box), {128, interp, 127});
      const auto lay = letterbox_layout(pb.width(), pb.height(), 128);
      for (int y = lay.offset_y; y < lay.offset_y + lay.content_h; ++y) {
        for (int x = lay.offset_x; x < lay.offset_x + lay.content_w; ++x) {
          const auto* p = out.pixel(x, y);
          if (p[0] > 200 || p[1] < 1) return fmt("trial %d: sentinel leaked at (%d,%d)", trial, x, y);
          ++reads;
        }
      }
    }
  }
  if (reads == 0) return "sentinel test exercised no pixels";
  return {};
}

std::string boxparse_check() {
  const auto corpus = dftest::read_json(fixture("boxparse_corpus.json"));
  std::size_t passed = 0;
  for (int round = 0; round < 2; ++round) {
    passed = 0;
    for (const auto& c : corpus.at("cases")) {
      const std::string name = c.at("name"), text = c.at("text"), expect = c.at("expect");
      const int w = c.at("w"), h = c.at("h");
      if (expect == "ok") {
        const auto r = parse_box(text, w, h);
        const auto want = c.at("box").get<std::vector<double>>();
        for (int k = 0; k < 4; ++k) {
          if (std::abs(r.box.coords()[k] - want[k]) > 1e-12) return name + ": coordinate mismatch";
        }
        if (to_string(r.mode) != c.at("mode").get<std::string>()) return name + ": mode mismatch";
      } else {
        try {
          parse_box(text, w, h);
          return name + ": parsed but expected " + expect;
        } catch (const Error& e) {
          if (to_string(e.code()) != expect) return name + ": got " + std::string(to_string(e.code()));
        }
      }
      ++passed;
    }
  }
  if (passed != 40) return fmt("%zu/40 cases", passed);
  return {};
}

PipelineConfig bench_config(Mode m, int parallelism) {
  PipelineConfig cfg;
  cfg.mode = m;
  cfg.parallelism = parallelism;
  cfg.config_hash = "acceptance";
  return cfg;
}

std::string bench_check() {
  const auto items = load_eval_items(fixture("bench_items.jsonl"));
  if (items.size() != 20) return "fixture does not have 20 items";
  const auto backend = dftest::bench_backend();
  const auto resolve = file_image_resolver(fixture(""));
  const std::map<Mode, std::size_t> want = {{Mode::Macro, 8}, {Mode::Micro, 12}, {Mode::Dual, 20}};
  for (const auto& [mode, expected] : want) {
    std::string reference;
    for (int par : {1, 4, 8}) {
      const auto run = run_benchmark(items, backend, bench_config(mode, par), resolve);
      if (run.scored.report.correct != expected) {
        return fmt("%s at parallelism %d: %zu/20, want %zu/20", std::string(to_string(mode)).c_str(), par,
                   run.scored.report.correct, expected);
      }
      std::string dump;
      for (std::size_t i = 0; i < items.size(); ++i) {
        dump += results_line(items[i], run.batch.results[i], run.scored.items[i]).dump() + "\n";
      }
      if (reference.empty()) reference = dump;
      if (dump != reference) return fmt("%s differs at parallelism %d", std::string(to_string(mode)).c_str(), par);
    }
  }
  return {};
}

std::string curation_check() {
  dftest::TempDir dir;
  const auto s = curate_all(fixture("vg10.jsonl"), dir / "a.jsonl");
  if (s.total != 10 || s.kept != 7 || s.dropped() != 3) {
    return fmt("summary {%zu, %zu, dropped %zu}", s.total, s.kept, s.dropped());
  }
  curate_all(fixture("vg10.jsonl"), dir / "b.jsonl");
  const auto a = dftest::read_text(dir / "a.jsonl");
  if (a != dftest::read_text(dir / "b.jsonl")) return "rerun is not byte-identical";
  std::istringstream lines(a);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    const auto box = j.at("box").get<std::vector<double>>();
    const auto parsed = parse_box(j.at("conversations").at(1).at("value").get<std::string>(), 1, 1);
    for (int k = 0; k < 4; ++k) {
      if (std::abs(parsed.box.coords()[k] - box[k]) > 5e-4) return j.at("id").get<std::string>() + ": round-trip drift";
    }
    ++n;
  }
  if (n != 7) return fmt("%zu kept lines", n);
  return {};
}

EvalItem pope_item(bool gold) {
  EvalItem it;
  it.item_id = "p";
  it.question = "Is there a cat in the image?";
  it.gold = gold ? "yes" : "no";
  it.tags.pope_split = PopeSplit::Random;
  return it;
}

std::string pope_check() {
  const auto worked = pope_from_counts({9, 1, 1, 9, 0});
  if (worked.f1 != 0.9 || worked.accuracy != 0.9) return fmt("worked case f1 %.17g acc %.17g", worked.f1, worked.accuracy);
  std::mt19937 rng(77);
  std::uniform_int_distribution<int> count(1, 80);
  std::bernoulli_distribution coin(0.5);
  for (int draw = 0; draw < 100; ++draw) {
    std::vector<EvalItem> items;
    std::vector<std::string> preds;
    int tp = 0, fp = 0, fn = 0, tn = 0;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const bool g = coin(rng), p = coin(rng);
      items.push_back(pope_item(g));
      preds.push_back(p ? "Yes." : "No, there is not.");
      (g ? (p ? tp : fn) : (p ? fp : tn))++;
    }
    const auto m = pope_metrics(items, preds).at("random");
    const int den = 2 * tp + fp + fn;
    const double f1 = den == 0 ? 0.0 : static_cast<double>(2 * tp) / den;
    const double acc = static_cast<double>(tp + tn) / n;
    if (m.f1 != f1 || m.accuracy != acc) return fmt("draw %d: f1 %.17g vs %.17g", draw, m.f1, f1);
  }
  return {};
}

std::string ensemble_check() {
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> level(0, 4);  // few levels so ties are frequent
  for (int k = 2; k <= 6; ++k) {
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<ScoredAnswer> c;
      for (int i = 0; i < k; ++i) c.push_back(with_ppl(std::to_string(i), 1.0 + 0.5 * level(rng)));
      std::size_t want = 0;
      for (std::size_t i = 1; i < c.size(); ++i) {
        if (c[i].ppl < c[want].ppl) want = i;
      }
      const auto got = ppl_ensemble(c);
      if (got != want) return fmt("k=%d trial %d: got %zu want %zu", k, trial, got, want);
    }
  }
  return {};
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  run("perplexity matches compensated oracle and closed forms", 1.0, perplexity_check);
  run("selection picks macro iff strictly lower PPL", 1.0, selection_check);
  run("crop/zoom letterbox geometry and sentinel isolation", 5.0, geometry_check);
  run("box parsing corpus 40/40", 5.0, boxparse_check);
  run("mock benchmark macro 8/20, micro 12/20, dual 20/20, parallelism-invariant", 10.0, bench_check);
  run("curation summary, byte-identical rerun, box round-trip", 10.0, curation_check);
  run("POPE F1/accuracy match hand counts", 5.0, pope_check);
  run("PPL ensemble picks first argmin for k=2..6", 5.0, ensemble_check);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d failure(s), %.3f s total\n", failures, total);
  return failures == 0 && total < 60.0 ? 0 : 1;
}
