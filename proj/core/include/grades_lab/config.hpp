#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grades_lab/earlystop.hpp"
#include "grades_lab/grades.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/optimizer.hpp"
#include "grades_lab/task.hpp"

namespace grades_lab {

inline constexpr int kConfigSchemaVersion = 1;

enum class Method { FP, FP_GradES, FP_ES, LoRA, LoRA_GradES, LoRA_ES };

inline constexpr Method kAllMethods[] = {Method::FP,   Method::FP_GradES,   Method::FP_ES,
                                         Method::LoRA, Method::LoRA_GradES, Method::LoRA_ES};

std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view s);
bool is_lora(Method m) noexcept;
bool uses_grades(Method m) noexcept;
bool uses_es(Method m) noexcept;

enum class Precision { F32, F64 };
std::string_view precision_name(Precision p) noexcept;
Precision parse_precision(std::string_view s);

struct LoraConfig {
  std::size_t rank = 8;
  double scale = 1.0;
  std::vector<Role> roles;  // empty = all seven
};

// GradES settings as written in the config file. total_steps comes from the run.
struct GradEsSettings {
  double alpha = 0.5;
  double tau = 1.0;
  double tau_lora = 0.01;
  MetricMode metric_mode = MetricMode::GradDiff;
  MetricMode lora_metric_mode = MetricMode::GradNorm;
  bool normalize_by_size = false;
  std::map<Role, double> role_tau;
  std::map<int, double> layer_tau;
};

struct TelemetryConfig {
  // Off makes wall-time fields null so repeated runs are byte-identical.
  bool wall_clock = true;
  bool checkpoint = true;
  bool csv = true;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  Method method = Method::FP;
  Precision precision = Precision::F32;
  std::uint64_t seed = 1;
  std::size_t total_steps = 2000;
  std::size_t batch_size = 4;
  ModelConfig model;  // seed is derived from `seed`
  TaskSpec task;      // seed is derived from `seed`
  OptimizerConfig optimizer;
  double lr = 3e-3;
  double lora_lr = 1e-2;
  ScheduleConfig schedule;
  LoraConfig lora;
  std::optional<GradEsSettings> grades;
  std::optional<EsConfig> es;
  TelemetryConfig telemetry;

  // Propagates `seed` into model/task and checks every invariant, including
  // that the method's required sections are present.
  void finalize();
  void validate() const;

  double effective_lr() const { return is_lora(method) ? lora_lr : lr; }
  // Controller config for this method (LoRA methods use tau_lora and lora_metric_mode).
  GradEsConfig grades_config() const;
  std::uint64_t lora_seed() const { return seed ^ 0x9e3779b97f4a7c15ULL; }
};

// Parses a JSON config. Unknown keys are rejected; missing keys take defaults.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& cfg);

}  // namespace grades_lab
