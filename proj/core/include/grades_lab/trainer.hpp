#pragma once

#include <concepts>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "grades_lab/config.hpp"
#include "grades_lab/flops.hpp"
#include "grades_lab/grades.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/telemetry.hpp"

namespace grades_lab {

// Read-only view handed to an observer after every executed step.
template <std::floating_point T>
struct StepView {
  std::size_t step = 0;
  const ModelParams<T>* params = nullptr;
  const std::set<ComponentId>* frozen = nullptr;
  const GradientBundle<T>* grads = nullptr;
  const StepRecord* record = nullptr;
};

template <std::floating_point T>
struct RunOptions {
  // When set, metrics.jsonl, freeze_log.jsonl, summary.json, checkpoint.bin
  // and metrics.csv are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const StepView<T>&)> observer;
  // Stop after this many steps regardless of T (schedules still use T).
  std::optional<std::size_t> max_steps;
};

template <std::floating_point T>
struct RunResult {
  RunSummary summary;
  std::vector<StepRecord> steps;
  std::vector<ValCheckRecord> val_checks;
  std::vector<FreezeEvent> freeze_log;
  std::vector<ComponentId> monitored;
  ModelParams<T> initial_params;
  ModelParams<T> final_params;
  flops::CostLedger ledger;
};

// Mean gradient over a batch, as taken by one training step. Every parameter
// gets its gradient whatever the frozen set is; freezing only skips updates.
// Throws NumericalError on a non-finite loss.
template <std::floating_point T>
GradientBundle<T> batch_gradients(const ModelParams<T>& params, std::span<const Sequence> batch,
                                  double* mean_loss = nullptr);

// Builds the cost model a run with this config is charged against.
flops::CostModel cost_model_for(const RunConfig& cfg);

// Single-threaded training loop. Per step: batch gradients, GradES observation,
// updates that skip frozen matrices, ledger charge, periodic validation for ES
// methods, then telemetry. Non-finite loss or gradients end the run with
// terminated_by = diverged and the error recorded in the summary.
template <std::floating_point T>
RunResult<T> run_experiment(const RunConfig& cfg, const RunOptions<T>& options = {});

// Precision-dispatched run writing outputs to out_dir; returns the summary.
RunSummary run_to_directory(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct ComparisonRow {
  Method method = Method::FP;
  std::size_t steps_executed = 0;
  std::uint64_t total_flops = 0;
  std::uint64_t update_flops = 0;
  double flops_ratio_vs_fp = 0.0;
  std::optional<double> wall_time_s;
  std::optional<double> speedup_vs_fp;
  double final_train_loss = 0.0;
  Termination terminated_by = Termination::MaxSteps;
};

// Rows in input order with ratios against the single FP run. Throws
// InvalidInput when there is no FP run, more than one, or the runs disagree on
// model or task.
std::vector<ComparisonRow> compare_runs(std::span<const RunSummary> summaries);
std::string comparison_json(std::span<const ComparisonRow> rows);
std::string comparison_csv(std::span<const ComparisonRow> rows);

// Runs all six methods from one base config into out_dir/<method>/, fills the
// FP-relative ratios into each summary, and writes comparison.json/.csv.
std::vector<RunSummary> run_suite(const RunConfig& base, const std::filesystem::path& out_dir);

// Threshold such that `fraction` of `metrics` lie strictly below it.
// 0 gives a value below the minimum, 1 a value above the maximum.
double suggest_tau(std::vector<double> metrics, double fraction);

struct TauBracket {
  double tau = 0.0;
  std::size_t probe_step = 0;  // first post-grace step
  std::vector<ComponentMetric> metrics;
};

// Probes cfg (as its GradES variant) with tau = 0 through the first post-grace
// step and suggests a threshold from that step's metric distribution.
template <std::floating_point T>
TauBracket tau_bracket(const RunConfig& cfg, double target_freeze_fraction);
TauBracket tau_bracket_dispatch(const RunConfig& cfg, double target_freeze_fraction);

}  // namespace grades_lab
