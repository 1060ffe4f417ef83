#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/config.hpp"
#include "dualfocus/curate.hpp"
#include "dualfocus/eval.hpp"

namespace dualfocus::cli {

enum ExitCode : int {
  kOk = 0,
  kIoError = 1,
  kConfigError = 2,
  kBackendUnreachable = 3,
};

namespace detail {

inline bool write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return false;
  out << text;
  out.flush();
  return static_cast<bool>(out);
}

}  // namespace detail

/// Filters and reformats an ingestion file. Exit 0 ok, 1 I/O, 2 config.
inline int cmd_curate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  out << "config_hash: " << config_hash(cfg) << '\n';
  if (cfg.paths.input.empty() || cfg.paths.output.empty()) {
    err << "error: curate needs paths.input and paths.output\n";
    return kConfigError;
  }
  const auto input = resolve_path(cfg, cfg.paths.input);
  const auto output = resolve_path(cfg, cfg.paths.output);
  const auto summary_path = cfg.paths.summary.empty() ? std::filesystem::path(output.string() + ".summary.json")
                                                      : resolve_path(cfg, cfg.paths.summary);
  try {
    const CurationSummary summary = curate_all(input, output, cfg.curation);
    auto j = to_json(summary);
    j["config_hash"] = config_hash(cfg);
    if (!detail::write_text(summary_path, j.dump(2) + "\n")) {
      err << "error: cannot write " << summary_path.string() << '\n';
      return kIoError;
    }
    out << "total: " << summary.total << "\nkept: " << summary.kept << '\n';
    for (const auto& [reason, n] : summary.dropped_by_reason) out << "dropped[" << reason << "]: " << n << '\n';
    return kOk;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigError ? kConfigError : kIoError;
  }
}

/// Runs the benchmark items through the configured mode and writes results
/// JSONL plus a manifest. Exit 3 when a backend fails its startup probe.
inline int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::string hash = config_hash(cfg);
  out << "config_hash: " << hash << '\n';
  if (cfg.paths.items.empty() || cfg.paths.results.empty()) {
    err << "error: run needs paths.items and paths.results\n";
    return kConfigError;
  }
  BackendSet backends;
  try {
    backends = make_backends(cfg);
    backends.main->probe();
    for (const auto& b : backends.members) {
      if (b) b->probe();
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (e.code() == ErrorCode::BackendUnavailable || e.code() == ErrorCode::Timeout) return kBackendUnreachable;
    return kConfigError;
  }

  const auto items_path = resolve_path(cfg, cfg.paths.items);
  const auto results_path = resolve_path(cfg, cfg.paths.results);
  const auto manifest_path = cfg.paths.manifest.empty()
                                 ? std::filesystem::path(results_path.string() + ".manifest.json")
                                 : resolve_path(cfg, cfg.paths.manifest);
  std::vector<EvalItem> items;
  try {
    items = load_eval_items(items_path);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  }
  if (items.empty()) {
    err << "error: no items in " << items_path.string() << '\n';
    return kIoError;
  }

  const PipelineConfig pcfg = pipeline_config(cfg, backends);
  const auto base = items_path.has_parent_path() ? items_path.parent_path() : std::filesystem::path(".");
  BenchmarkRun run;
  try {
    run = run_benchmark(items, *backends.main, pcfg, file_image_resolver(base));
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigError ? kConfigError : kIoError;
  }

  std::string lines;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto j = results_line(items[i], run.batch.results[i], run.scored.items[i]);
    j["config_hash"] = hash;
    lines += j.dump() + '\n';
  }
  nlohmann::json manifest = to_json(run.batch.manifest);
  auto metrics = to_json(run.scored.report);
  metrics.erase("manifest");
  manifest["metrics"] = metrics;
  if (!detail::write_text(results_path, lines) || !detail::write_text(manifest_path, manifest.dump(2) + "\n")) {
    err << "error: cannot write results to " << results_path.string() << '\n';
    return kIoError;
  }
  out << "mode: " << to_string(cfg.mode) << "\nitems: " << items.size() << "\nfailed: " << run.batch.manifest.failed
      << "\naccuracy: " << run.scored.report.accuracy << '\n';
  return kOk;
}

struct ReportOptions {
  std::vector<std::filesystem::path> results;
  std::filesystem::path out_dir;  // empty: JSON to stdout only
  std::vector<double> gap_edges = default_gap_edges();
};

/// Re-scores one or more results files and emits metrics, per-dimension
/// tables, PPL-gap histograms and, for two or more files, per-dimension
/// deltas against the first. Exit 1 on malformed input.
inline int cmd_report(const ReportOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.results.empty()) {
    err << "error: report needs at least one results file\n";
    return kConfigError;
  }
  std::vector<ResultsFile> files;
  for (const auto& p : opts.results) {
    try {
      files.push_back(read_results(p));
    } catch (const SchemaError& e) {
      err << "error: " << p.string() << ": line " << e.record_index() << ": " << e.what() << '\n';
      return kIoError;
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kIoError;
    }
  }

  nlohmann::json report = {{"runs", nlohmann::json::array()}};
  std::vector<std::string> labels;
  std::map<std::string, std::string> csv_files;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& file = files[f];
    ScoredRun scored = score_results(file.items, file.results, file.mode);
    scored.report.config_hash = file.config_hash;
    if (!file.config_hash.empty()) out << "config_hash[" << f << "]: " << file.config_hash << '\n';
    const GapHistogram hist = ppl_gap_histogram(file.items, file.results, opts.gap_edges);
    nlohmann::json run = to_json(scored.report);
    run["source"] = opts.results[f].string();
    nlohmann::json gaps = nlohmann::json::object();
    for (const auto& [tag, bins] : hist.counts) {
      gaps[tag] = {{"counts", bins}, {"micro_lower", hist.micro_lower.at(tag)}, {"mean_gap", hist.mean_gap.at(tag)}};
    }
    nlohmann::json edges = nlohmann::json::array();
    for (double e : hist.edges) edges.push_back(format_edge(e));
    run["ppl_gap"] = {{"edges", edges}, {"by_tag", gaps}};
    report["runs"].push_back(run);

    std::string label = file.mode;
    if (std::find(labels.begin(), labels.end(), label) != labels.end()) label += "#" + std::to_string(f);
    labels.push_back(label);
    csv_files["dimensions_" + std::to_string(f) + ".csv"] = dimension_csv(scored.report);
    csv_files["ppl_gap_" + std::to_string(f) + ".csv"] = gap_histogram_csv(hist);
    out << label << ": accuracy " << scored.report.accuracy << " (" << scored.report.correct << "/"
        << scored.report.total << ", failed " << scored.report.failed << ")\n";
  }

  if (files.size() >= 2) {
    // Align on item ids of the first file.
    const auto& ref = files.front();
    std::vector<std::string> dims;
    std::map<std::string, std::vector<bool>> correct;
    std::map<std::string, std::map<std::string, bool>> by_id;
    for (std::size_t f = 0; f < files.size(); ++f) {
      const auto scored = score_results(files[f].items, files[f].results, files[f].mode);
      for (std::size_t i = 0; i < files[f].items.size(); ++i) by_id[labels[f]][files[f].items[i].item_id] = scored.items[i].correct;
    }
    for (const auto& it : ref.items) {
      bool everywhere = true;
      for (const auto& l : labels) everywhere = everywhere && by_id[l].contains(it.item_id);
      if (!everywhere) continue;
      dims.push_back(it.tags.dimension.empty() ? "all" : it.tags.dimension);
      for (const auto& l : labels) correct[l].push_back(by_id[l][it.item_id]);
    }
    if (dims.empty()) {
      err << "error: results files share no item ids\n";
      return kIoError;
    }
    const auto rows = dimension_breakdown(dims, correct, labels.front());
    nlohmann::json delta = nlohmann::json::array();
    for (const auto& row : rows) {
      delta.push_back({{"dimension", row.dimension}, {"n", row.n}, {"accuracy", row.accuracy}, {"delta", row.delta}});
    }
    report["delta"] = {{"baseline", labels.front()}, {"rows", delta}};
    csv_files["delta.csv"] = rows_csv(rows, labels.front());
  }

  if (opts.out_dir.empty()) {
    out << report.dump(2) << '\n';
    return kOk;
  }
  bool ok = detail::write_text(opts.out_dir / "report.json", report.dump(2) + "\n");
  for (const auto& [name, text] : csv_files) ok = ok && detail::write_text(opts.out_dir / name, text);
  if (!ok) {
    err << "error: cannot write report to " << opts.out_dir.string() << '\n';
    return kIoError;
  }
  out << "report: " << (opts.out_dir / "report.json").string() << '\n';
  return kOk;
}

}  // namespace dualfocus::cli
