#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grades_lab/config.hpp"
#include "grades_lab/earlystop.hpp"
#include "grades_lab/flops.hpp"
#include "grades_lab/grades.hpp"

// Run outputs. Every file carries schema_version; JSON numbers are written in
// shortest round-trip form so equal runs give equal bytes.
namespace grades_lab {

inline constexpr int kTelemetrySchemaVersion = 1;

// One executed training step.
struct StepRecord {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean over the step's batch
  double lr = 0.0;
  // Metric of every component that was unfrozen when the step began.
  std::vector<ComponentMetric> metrics;
  std::vector<ComponentId> newly_frozen;
  std::size_t frozen_count = 0;
  double frozen_fraction = 0.0;
  // Cumulative ledger after this step.
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
  std::uint64_t update_flops = 0;
  std::uint64_t val_flops = 0;
  // Some already-frozen component measured at or above its threshold again.
  bool frozen_metric_above_tau = false;
  std::optional<double> wall_time_ms;
};

struct ValCheckRecord {
  std::size_t step = 0;
  double val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t checks_since_improvement = 0;
  EsDecision decision = EsDecision::Continue;
};

enum class Termination { MaxSteps, AllFrozen, EarlyStop, Diverged };
std::string_view termination_name(Termination t) noexcept;
Termination parse_termination(std::string_view s);

struct RunSummary {
  int schema_version = kTelemetrySchemaVersion;
  Method method = Method::FP;
  Precision precision = Precision::F32;
  std::uint64_t seed = 0;
  ModelConfig model;
  TaskSpec task;
  std::size_t total_steps = 0;
  std::size_t steps_executed = 0;
  Termination terminated_by = Termination::MaxSteps;
  double final_train_loss = 0.0;  // full training set at the final parameters
  double final_val_loss = 0.0;
  double last_batch_loss = 0.0;
  std::size_t frozen_components = 0;
  std::size_t monitored_components = 0;
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
  std::uint64_t update_flops = 0;
  std::uint64_t val_flops = 0;
  std::uint64_t total_flops = 0;
  std::optional<double> flops_ratio_vs_fp;
  std::optional<double> wall_time_s;
  std::optional<double> speedup_vs_fp;
  std::string config_fingerprint;
  std::optional<std::string> error;
};

std::string step_record_json(const StepRecord& r);
std::string val_check_json(const ValCheckRecord& r);
std::string freeze_event_json(const FreezeEvent& e);
std::string summary_json(const RunSummary& s);

RunSummary parse_summary(std::string_view json_text);
std::vector<FreezeEvent> parse_freeze_log(std::string_view jsonl_text);
// Step lines of a metrics.jsonl stream (val_check lines are skipped).
std::vector<StepRecord> parse_metrics(std::string_view jsonl_text);

// Wide CSV: one row per step, one metric column per monitored component
// (empty once frozen).
std::string metrics_csv(std::span<const StepRecord> records, std::span<const ComponentId> components);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace grades_lab
