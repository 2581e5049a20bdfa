#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "synsel/synsel.hpp"

namespace fs = std::filesystem;
using namespace synsel;
using namespace synsel::harness;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

ExperimentConfig load_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective synthetic augmentation: RL sample selection over a candidate pool"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Run seed (overrides config seeds)")
      ->configurable();
  app.add_option("--threads", threads, "Seeds evaluated in parallel")->check(CLI::Range(1, 256));

  std::string config_path, out_path;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic task for one seed");
  gen->add_option("--config", config_path, "Experiment config (JSON)");
  gen->add_option("--out", out_path, "Output directory")->required();

  std::string algorithm, variant, log_path, hist_path;
  auto* sel = app.add_subcommand("select", "Train the controller and write its greedy selection mask");
  sel->add_option("--config", config_path, "Experiment config (JSON)");
  sel->add_option("--algorithm", algorithm, "ppo | reinforce")->check(CLI::IsMember({"ppo", "reinforce"}));
  sel->add_option("--controller", variant, "transformer | gru | gru-attn")
      ->check(CLI::IsMember({"transformer", "gru", "gru-attn"}));
  sel->add_option("--out", out_path, "Mask JSON path")->required();
  sel->add_option("--log", log_path, "JSON-lines training log (default: <out>.log.jsonl)");
  sel->add_option("--histogram", hist_path, "Distance histogram CSV (default: <out>.hist.csv)");

  auto* cmp = app.add_subcommand("compare", "Evaluate every selection arm over the configured seeds");
  cmp->add_option("--config", config_path, "Experiment config (JSON)");
  cmp->add_option("--out", out_path, "Report JSON path")->required();
  cmp->add_option("--log", log_path, "JSON-lines training log of the RL arm");

  std::string in_path, format = "table";
  auto* rep = app.add_subcommand("report", "Render a comparison report");
  rep->add_option("--in", in_path, "Report JSON")->required();
  rep->add_option("--format", format, "table | csv")->check(CLI::IsMember({"table", "csv"}));

  auto* gc = app.add_subcommand("grad-check", "Finite-difference verification of every trained block");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto cfg = load_or_default(config_path);
      const std::uint64_t s = seed_given ? seed : cfg.seeds.front();
      const Task task = task_for_seed(cfg, s);
      const fs::path dir(out_path);
      fs::create_directories(dir);
      save_features(task.train, dir / "train.fsel");
      save_features(task.val, dir / "val.fsel");
      save_features(task.test, dir / "test.fsel");
      save_features(pool_as_feature_set(task.pool), dir / "pool.fsel");
      save_truth_csv(task.pool, dir / "pool_truth.csv");
      std::cout << "wrote task for seed " << s << " to " << dir.string() << " (checksum " << std::hex
                << task.checksum() << std::dec << ")\n";
    } else if (*sel) {
      auto cfg = load_or_default(config_path);
      if (!algorithm.empty()) cfg.algorithm = algorithm_from_string(algorithm);
      if (!variant.empty()) cfg.controller.variant = controller::variant_from_string(variant);
      cfg.validate();
      const std::uint64_t s = seed_given ? seed : cfg.seeds.front();
      const Task task = task_for_seed(cfg, s);
      const auto run = run_experiment(cfg, task, s);
      write_text(out_path, baselines::to_json(run.mask).dump(2) + "\n");
      std::string log_text;
      for (const auto& l : run.log_lines) log_text += l + "\n";
      write_text(log_path.empty() ? out_path + ".log.jsonl" : log_path, log_text);
      const auto hist = distance_histogram(run.mask, task.pool, compute_centroids(task.train), cfg.histogram_bins);
      write_text(hist_path.empty() ? out_path + ".hist.csv" : hist_path, histogram_csv(hist));
      std::cout << "selected " << run.mask.total() << " of " << task.pool.total() << " candidates (keep rate "
                << run.keep_rate << ", corrupted " << run.mask.corrupted_count(task.pool) << ")\n";
    } else if (*cmp) {
      auto cfg = load_or_default(config_path);
      if (seed_given) cfg.seeds = {seed};
      const auto report = compare_methods(cfg, threads);
      write_text(out_path, canonical_dump(report));
      if (!log_path.empty()) {
        std::string log_text;
        for (const auto& s : report.seeds)
          for (const auto& l : s.log_lines) log_text += l + "\n";
        write_text(log_path, log_text);
      }
      std::cout << render_table(nlohmann::json::parse(canonical_dump(report)));
    } else if (*rep) {
      std::ifstream in(in_path);
      if (!in) throw IoError("cannot open " + in_path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(in_path + " is not valid JSON: " + e.what());
      }
      std::cout << (format == "csv" ? render_csv(j) : render_table(j));
    } else if (*gc) {
      const auto suite = run_grad_checks();
      for (const auto& c : suite.cases) {
        std::printf("%-20s max_rel_error=%.3e  %s\n", c.name.c_str(), c.max_rel_error, c.passed ? "PASS" : "FAIL");
      }
      std::printf("%zu checks in %.2f s, tolerance %.0e\n", suite.cases.size(), suite.seconds, suite.tolerance);
      return suite.passed() && suite.seconds < 30.0 ? 0 : 1;
    }
  } catch (const synsel::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
