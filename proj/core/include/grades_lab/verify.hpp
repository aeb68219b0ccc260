#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grades_lab/config.hpp"
#include "grades_lab/grades.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/telemetry.hpp"

// Executable checks of the norm inequalities, analytic gradients and the
// convergence properties of the controller.
namespace grades_lab::verify {

struct CheckReport {
  std::string name;
  std::size_t samples = 0;
  double max_violation = 0.0;
  double tolerance = 0.0;
  bool passed = false;  // max_violation <= tolerance
  std::string notes;
  std::map<std::string, double> observations;
};

std::string report_json(const CheckReport& r);
std::string reports_json(std::span<const CheckReport> reports);

// Random f64 matrices with shapes in [1, max_dim]^2 and entries in [-10, 10].
// Violation: largest amount by which spectral, Frobenius, max-row-sum or
// max-column-sum norm exceeds the element-wise L1 norm.
CheckReport check_norm_theorem(std::size_t n_samples, std::size_t max_dim, std::uint64_t seed,
                               double tolerance = 1e-8);

// Central differences on every entry of every monitored matrix (and every
// adapter entry when lora_rank > 0) against backward(). Relative error per
// entry is |analytic - numeric| / max(|analytic|, |numeric|), 0 when both are 0.
struct FdOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::size_t seq_len = 6;
  std::size_t lora_rank = 0;
  bool include_unmonitored = false;
};
CheckReport check_grad_fd(const ModelConfig& cfg, std::uint64_t seed, const FdOptions& opts = {});

// Vocabulary of one token: the loss is identically zero, so every gradient
// entry must be exactly zero.
CheckReport check_zero_gradient(std::uint64_t seed);

// A token absent from both inputs and targets must get an exactly zero
// embedding-gradient row.
CheckReport check_unused_row(std::uint64_t seed);

// Full-batch loss must not increase by more than `tolerance` at any step
// after the warmup window ceil(warmup_fraction * T). The run must use SGD, a
// constant schedule and batch_size == n_train; it is executed in f64.
struct MonotoneOptions {
  double warmup_fraction = 0.05;
  double tolerance = 1e-9;
};
CheckReport check_monotone_loss(const RunConfig& cfg, const MonotoneOptions& opts = {});

// Small full-batch SGD config used by the monotone-loss checks.
RunConfig monotone_fixture(double lr, std::size_t total_steps, std::uint64_t seed);

// Geometric lr sweep: each candidate runs `probe_steps` full-batch SGD steps.
// Returns the largest lr below the first one that shows an increase.
struct LrBracket {
  double stable_lr = 0.0;
  std::optional<double> first_unstable_lr;
  std::vector<std::pair<double, double>> sweep;  // (lr, max violation)
};
LrBracket bracket_stable_lr(const RunConfig& cfg, double lr_min, double lr_max, double factor,
                            std::size_t probe_steps);

// Every freeze event must satisfy metric < tau; violation is the number of
// events that do not. With GradNorm metrics, the metric recorded in `steps`
// at the freeze step is checked again. Frozen components measured above
// their threshold later on are counted as an observation only.
CheckReport check_frozen_gradient_bound(std::span<const FreezeEvent> log,
                                        std::span<const StepRecord> steps = {},
                                        MetricMode mode = MetricMode::GradDiff);

// The suite behind `grades_lab verify`.
std::vector<CheckReport> run_all_checks();

}  // namespace grades_lab::verify
