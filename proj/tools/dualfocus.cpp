#include <cstdlib>
#include <filesystem>
#include <optional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dualfocus/cli.hpp"

namespace {

// Paths given on the command line are relative to the working directory,
// not to the config file.
std::string from_cwd(const std::string& p) {
  return p.empty() ? p : std::filesystem::absolute(p).string();
}

dualfocus::RunConfig load_or_default(const std::string& path) {
  if (path.empty()) {
    dualfocus::RunConfig cfg;
    dualfocus::apply_env_overrides(cfg);
    return cfg;
  }
  return dualfocus::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dualfocus: macro/micro dual-path VQA inference, curation and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  auto* curate = app.add_subcommand("curate", "filter and reformat VG-style annotations into training JSONL");
  curate->add_option("--config", config_path, "run configuration JSON");
  std::string input, output, summary;
  std::optional<double> iou;
  curate->add_option("--input", input, "ingestion file (JSON array or JSONL)");
  curate->add_option("--output", output, "conversation JSONL to write");
  curate->add_option("--summary", summary, "summary JSON (default: <output>.summary.json)");
  curate->add_option("--iou-threshold", iou, "overlap below which two matching regions are distinct objects");

  auto* run = app.add_subcommand("run", "run a benchmark file through a pipeline mode");
  run->add_option("--config", config_path, "run configuration JSON");
  std::string items, results, manifest, mode;
  std::optional<int> parallelism;
  run->add_option("--items", items, "benchmark items JSONL");
  run->add_option("--results", results, "results JSONL to write");
  run->add_option("--manifest", manifest, "manifest JSON (default: <results>.manifest.json)");
  run->add_option("--mode", mode, "macro | micro | dual | ensemble")
      ->check(CLI::IsMember({"macro", "micro", "dual", "ensemble"}));
  run->add_option("--parallelism", parallelism, "concurrent items")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "metrics, per-dimension tables and PPL diagnostics");
  std::vector<std::string> result_files;
  std::string out_dir;
  std::vector<double> edges;
  report->add_option("results", result_files, "results JSONL file(s); the first is the baseline")->required();
  report->add_option("--out", out_dir, "directory for report.json and CSV tables");
  report->add_option("--bins", edges, "PPL-gap histogram edges (sorted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dualfocus::cli::kConfigError;
  }

  try {
    if (*curate) {
      auto cfg = load_or_default(config_path);
      if (!input.empty()) cfg.paths.input = from_cwd(input);
      if (!output.empty()) cfg.paths.output = from_cwd(output);
      if (!summary.empty()) cfg.paths.summary = from_cwd(summary);
      if (iou) cfg.curation.iou_threshold = *iou;
      return dualfocus::cli::cmd_curate(cfg, std::cout, std::cerr);
    }
    if (*run) {
      auto cfg = load_or_default(config_path);
      if (!items.empty()) cfg.paths.items = from_cwd(items);
      if (!results.empty()) cfg.paths.results = from_cwd(results);
      if (!manifest.empty()) cfg.paths.manifest = from_cwd(manifest);
      if (!mode.empty()) cfg.mode = dualfocus::mode_from_string(mode);
      if (parallelism) cfg.parallelism = *parallelism;
      return dualfocus::cli::cmd_run(cfg, std::cout, std::cerr);
    }
    dualfocus::cli::ReportOptions opts;
    for (const auto& f : result_files) opts.results.emplace_back(f);
    opts.out_dir = out_dir;
    if (!edges.empty()) opts.gap_edges = edges;
    return dualfocus::cli::cmd_report(opts, std::cout, std::cerr);
  } catch (const dualfocus::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == dualfocus::ErrorCode::ConfigError ? dualfocus::cli::kConfigError
                                                         : dualfocus::cli::kIoError;
  }
}
