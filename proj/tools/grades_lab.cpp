// grades_lab command-line front end.
//
// GRADES_LAB_THREADS is reserved and ignored: the training loop is
// single-threaded so that equal configs give byte-identical outputs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "grades_lab/config.hpp"
#include "grades_lab/error.hpp"
#include "grades_lab/telemetry.hpp"
#include "grades_lab/trainer.hpp"
#include "grades_lab/verify.hpp"

namespace fs = std::filesystem;
using namespace grades_lab;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
};

RunConfig load(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.precision) cfg.precision = parse_precision(*c.precision);
  cfg.finalize();
  return cfg;
}

void print_table(const std::vector<ComparisonRow>& rows) {
  std::printf("%-12s %8s %14s %10s %10s %10s %12s  %s\n", "method", "steps", "total_flops", "flops/fp",
              "wall_s", "speedup", "train_loss", "terminated_by");
  for (const auto& r : rows) {
    const std::string wall = r.wall_time_s ? std::to_string(*r.wall_time_s) : "-";
    const std::string speed = r.speedup_vs_fp ? std::to_string(*r.speedup_vs_fp) : "-";
    std::printf("%-12s %8zu %14llu %10.4f %10s %10s %12.6f  %s\n",
                std::string(method_name(r.method)).c_str(), r.steps_executed,
                static_cast<unsigned long long>(r.total_flops), r.flops_ratio_vs_fp, wall.c_str(),
                speed.c_str(), r.final_train_loss, std::string(termination_name(r.terminated_by)).c_str());
  }
}

void add_common(CLI::App* cmd, Common& c, bool need_out) {
  cmd->add_option("--config", c.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (need_out) out->required();
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--precision", c.precision, "Override precision")->check(CLI::IsMember({"f32", "f64"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GradES laboratory: matrix-level gradient early stopping on a small transformer"};
  app.require_subcommand(1);
  app.footer("GRADES_LAB_THREADS is ignored; every run is single-threaded and deterministic.");

  Common run_opts;
  auto* run = app.add_subcommand("run", "Train one configuration and write its outputs");
  add_common(run, run_opts, true);

  Common suite_opts;
  auto* suite = app.add_subcommand("suite", "Run all six methods and compare them against FP");
  add_common(suite, suite_opts, true);

  std::string verify_out;
  auto* ver = app.add_subcommand("verify", "Run every verification check");
  ver->add_option("--out", verify_out, "Write the reports as JSON to this file");
  std::optional<std::string> verify_precision;
  ver->add_option("--precision", verify_precision, "Accepted for symmetry; checks always run in f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  Common br_opts;
  double fraction = 0.5;
  auto* br = app.add_subcommand("bracket-tau", "Suggest a GradES threshold from a tau = 0 probe");
  add_common(br, br_opts, false);
  br->add_option("--fraction", fraction, "Target fraction of components frozen at the first post-grace step")
      ->check(CLI::Range(0.0, 1.0));

  std::vector<std::string> summaries;
  std::string compare_out;
  auto* cmp = app.add_subcommand("compare", "Compare run summaries against the FP run");
  cmp->add_option("summaries", summaries, "summary.json files or run/suite directories")->required();
  cmp->add_option("--out", compare_out, "Write comparison.json and comparison.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      const RunConfig cfg = load(run_opts);
      const RunSummary s = run_to_directory(cfg, run_opts.out);
      std::cout << summary_json(s);
      return s.terminated_by == Termination::Diverged ? kExitFailure : 0;
    }
    if (*suite) {
      const RunConfig cfg = load(suite_opts);
      const auto sums = run_suite(cfg, suite_opts.out);
      print_table(compare_runs(sums));
      for (const auto& s : sums)
        if (s.terminated_by == Termination::Diverged) return kExitFailure;
      return 0;
    }
    if (*ver) {
      const auto reports = verify::run_all_checks();
      bool ok = true;
      for (const auto& r : reports) {
        std::printf("%-4s %-40s samples=%-8zu violation=%.3e tol=%.1e\n", r.passed ? "PASS" : "FAIL",
                    r.name.c_str(), r.samples, r.max_violation, r.tolerance);
        ok = ok && r.passed;
      }
      if (!verify_out.empty()) write_text_file(verify_out, verify::reports_json(reports));
      return ok ? 0 : kExitFailure;
    }
    if (*br) {
      const RunConfig cfg = load(br_opts);
      const TauBracket b = tau_bracket_dispatch(cfg, fraction);
      std::printf("probe_step %zu\n", b.probe_step);
      for (const auto& m : b.metrics) std::printf("  %-16s %.9g\n", component_name(m.component).c_str(), m.value);
      std::printf("suggested_tau %.17g\n", b.tau);
      if (!br_opts.out.empty()) {
        fs::create_directories(br_opts.out);
        write_text_file(fs::path(br_opts.out) / "tau.txt", std::to_string(b.tau) + "\n");
      }
      return 0;
    }
    if (*cmp) {
      std::vector<RunSummary> sums;
      for (const auto& p : summaries) {
        const fs::path path(p);
        if (fs::is_directory(path)) {
          if (fs::exists(path / "summary.json")) {
            sums.push_back(parse_summary(read_text_file(path / "summary.json")));
            continue;
          }
          std::vector<fs::path> found;
          for (const auto& e : fs::directory_iterator(path))
            if (fs::exists(e.path() / "summary.json")) found.push_back(e.path() / "summary.json");
          std::sort(found.begin(), found.end());
          for (const auto& f : found) sums.push_back(parse_summary(read_text_file(f)));
        } else {
          sums.push_back(parse_summary(read_text_file(path)));
        }
      }
      const auto rows = compare_runs(sums);
      print_table(rows);
      if (!compare_out.empty()) {
        fs::create_directories(compare_out);
        write_text_file(fs::path(compare_out) / "comparison.json", comparison_json(rows));
        write_text_file(fs::path(compare_out) / "comparison.csv", comparison_csv(rows));
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "filesystem error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
