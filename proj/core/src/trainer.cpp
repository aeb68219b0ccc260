#include "grades_lab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "grades_lab/checkpoint.hpp"
#include "grades_lab/earlystop.hpp"
#include "grades_lab/optimizer.hpp"
#include "grades_lab/task.hpp"

namespace grades_lab {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_fingerprint(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump_run_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

std::vector<Role> adapted_roles(const RunConfig& cfg) {
  if (!cfg.lora.roles.empty()) return cfg.lora.roles;
  return {kAllRoles.begin(), kAllRoles.end()};
}

template <std::floating_point T>
double mean_loss(const ModelParams<T>& params, const std::vector<Sequence>& set) {
  double total = 0.0;
  for (const auto& s : set) total += sequence_loss(params, s.tokens, s.targets);
  return total / static_cast<double>(set.size());
}

// GradES settings for the run. Methods without GradES still get a controller
// with tau = 0 so metrics are recorded; nothing can fall strictly below zero.
GradEsConfig controller_config(const RunConfig& cfg) {
  GradEsConfig g = cfg.grades_config();
  if (!uses_grades(cfg.method)) {
    g.tau = 0.0;
    g.role_tau.clear();
    g.layer_tau.clear();
  }
  return g;
}

template <std::floating_point T>
ModelParams<T> initial_params(const RunConfig& cfg) {
  ModelParams<T> p = init_params<T>(cfg.model);
  if (is_lora(cfg.method)) {
    attach_adapters(p, cfg.lora.rank, cfg.lora.scale, std::span<const Role>(cfg.lora.roles),
                    cfg.lora_seed());
  }
  return p;
}

}  // namespace

template <std::floating_point T>
GradientBundle<T> batch_gradients(const ModelParams<T>& params, std::span<const Sequence> batch,
                                  double* mean_loss_out) {
  if (batch.empty()) throw InvalidInput("batch_gradients: empty batch");
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  GradientBundle<T> grads = zero_gradients(params);
  double total = 0.0;
  for (const Sequence& seq : batch) {
    auto fwd = forward(params, seq.tokens);
    const double l = loss(fwd.logits, seq.targets);
    if (!std::isfinite(l)) throw NumericalError("non-finite training loss");
    total += l;
    accumulate(grads, backward(params, fwd.cache, seq.targets), inv_batch);
  }
  if (mean_loss_out != nullptr) *mean_loss_out = total / static_cast<double>(batch.size());
  return grads;
}

flops::CostModel cost_model_for(const RunConfig& cfg) {
  flops::CostModel c;
  c.model = cfg.model;
  c.seq_len = cfg.task.stream_len();
  c.batch_size = cfg.batch_size;
  c.optimizer = cfg.optimizer.kind;
  if (is_lora(cfg.method)) {
    c.mode = flops::TrainingMode::Lora;
    c.lora_rank = cfg.lora.rank;
    c.lora_roles = adapted_roles(cfg);
  }
  return c;
}

template <std::floating_point T>
RunResult<T> run_experiment(const RunConfig& cfg, const RunOptions<T>& options) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  const Dataset data = gen_dataset(cfg.task);
  const std::vector<Sequence> train = encode_all(data.train);
  const std::vector<Sequence> val = encode_all(data.val);
  const flops::CostModel cost = cost_model_for(cfg);
  const std::size_t T_steps = cfg.total_steps;
  const std::size_t limit = std::min(T_steps, options.max_steps.value_or(T_steps));

  RunResult<T> res;
  res.initial_params = initial_params<T>(cfg);
  ModelParams<T> params = res.initial_params;
  GradEsController<T> controller = GradEsController<T>::for_model(controller_config(cfg), params);
  res.monitored = controller.components();
  Optimizer<T> optimizer(cfg.optimizer);

  const bool es_on = uses_es(cfg.method);
  const EsConfig es_cfg = cfg.es.value_or(EsConfig{});
  const std::size_t es_interval = es_cfg.interval(T_steps);
  EsState es_state;
  std::optional<ModelParams<T>> best_snapshot;

  RunSummary& s = res.summary;
  s.method = cfg.method;
  s.precision = cfg.precision;
  s.seed = cfg.seed;
  s.model = cfg.model;
  s.task = cfg.task;
  s.total_steps = T_steps;
  s.monitored_components = res.monitored.size();
  s.config_fingerprint = config_fingerprint(cfg);
  s.terminated_by = Termination::MaxSteps;

  std::size_t cursor = 0;
  std::vector<Sequence> batch;
  GradientBundle<T> grads;

  for (std::size_t step = 1; step <= limit; ++step) {
    StepRecord rec;
    rec.step = step;
    rec.lr = learning_rate(cfg.schedule, cfg.effective_lr(), step, T_steps);
    try {
      batch.clear();
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        batch.push_back(train[cursor]);
        cursor = (cursor + 1) % train.size();
      }
      try {
        grads = batch_gradients(params, std::span<const Sequence>(batch), &rec.train_loss);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step));
      }

      const StepObservation obs = controller.observe_step(step, grads);
      rec.metrics = obs.active_metrics;
      rec.newly_frozen = obs.newly_frozen;
      for (const auto& fm : obs.frozen_metrics) {
        if (fm.value >= controller.config().tau_for(fm.component)) rec.frozen_metric_above_tau = true;
      }

      apply_updates(params, grads, rec.lr, controller.frozen(), optimizer);
    } catch (const NumericalError& e) {
      s.terminated_by = Termination::Diverged;
      s.error = e.what();
      break;
    }
    flops::charge_step(res.ledger, cost, controller.frozen(), step);

    std::optional<ValCheckRecord> check;
    if (es_on && step % es_interval == 0) {
      const double vl = validation_loss(params, std::span<const Sequence>(val), &res.ledger, &cost, step);
      const double before = es_state.best_val_loss;
      const EsDecision d = es_check(es_state, step, vl, es_cfg);
      if (es_state.best_val_loss < before) best_snapshot = params;
      check = ValCheckRecord{step, vl, es_state.best_val_loss, es_state.checks_since_improvement, d};
    }

    rec.frozen_count = controller.frozen().size();
    rec.frozen_fraction =
        static_cast<double>(rec.frozen_count) / static_cast<double>(res.monitored.size());
    rec.forward_flops = res.ledger.forward_flops;
    rec.backward_flops = res.ledger.backward_flops;
    rec.update_flops = res.ledger.update_flops;
    rec.val_flops = res.ledger.val_flops;
    if (cfg.telemetry.wall_clock) rec.wall_time_ms = elapsed_ms();
    s.steps_executed = step;
    s.last_batch_loss = rec.train_loss;
    res.steps.push_back(std::move(rec));
    if (check) res.val_checks.push_back(*check);

    if (options.observer) {
      options.observer(StepView<T>{step, &params, &controller.frozen(), &grads, &res.steps.back()});
    }

    if (check && check->decision == EsDecision::Stop) {
      if (best_snapshot) params = *best_snapshot;
      s.terminated_by = Termination::EarlyStop;
      break;
    }
    if (uses_grades(cfg.method) && controller.should_terminate()) {
      s.terminated_by = Termination::AllFrozen;
      break;
    }
  }

  res.freeze_log = controller.freeze_log();
  s.frozen_components = controller.frozen().size();
  s.forward_flops = res.ledger.forward_flops;
  s.backward_flops = res.ledger.backward_flops;
  s.update_flops = res.ledger.update_flops;
  s.val_flops = res.ledger.val_flops;
  s.total_flops = res.ledger.total();
  if (s.terminated_by != Termination::Diverged) {
    try {
      s.final_train_loss = mean_loss(params, train);
      s.final_val_loss = mean_loss(params, val);
    } catch (const NumericalError& e) {
      s.terminated_by = Termination::Diverged;
      s.error = e.what();
    }
  }
  if (s.terminated_by == Termination::Diverged) {
    s.final_train_loss = std::numeric_limits<double>::quiet_NaN();
    s.final_val_loss = std::numeric_limits<double>::quiet_NaN();
  }
  if (cfg.telemetry.wall_clock) s.wall_time_s = elapsed_ms() / 1000.0;
  res.final_params = std::move(params);

  if (options.out_dir) {
    const auto& dir = *options.out_dir;
    std::filesystem::create_directories(dir);
    std::string metrics;
    std::size_t vc = 0;
    for (const auto& r : res.steps) {
      metrics += step_record_json(r);
      metrics += '\n';
      while (vc < res.val_checks.size() && res.val_checks[vc].step == r.step) {
        metrics += val_check_json(res.val_checks[vc++]);
        metrics += '\n';
      }
    }
    write_text_file(dir / "metrics.jsonl", metrics);
    std::string log;
    for (const auto& e : res.freeze_log) {
      log += freeze_event_json(e);
      log += '\n';
    }
    write_text_file(dir / "freeze_log.jsonl", log);
    write_text_file(dir / "summary.json", summary_json(s));
    if (cfg.telemetry.checkpoint) save_checkpoint(dir / "checkpoint.bin", res.final_params);
    if (cfg.telemetry.csv) {
      write_text_file(dir / "metrics.csv", metrics_csv(res.steps, res.monitored));
    }
  }
  return res;
}

RunSummary run_to_directory(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  RunOptions<float> of;
  of.out_dir = out_dir;
  if (cfg.precision == Precision::F32) return run_experiment<float>(cfg, of).summary;
  RunOptions<double> od;
  od.out_dir = out_dir;
  return run_experiment<double>(cfg, od).summary;
}

std::vector<ComparisonRow> compare_runs(std::span<const RunSummary> summaries) {
  const RunSummary* fp = nullptr;
  for (const auto& s : summaries) {
    if (s.method != Method::FP) continue;
    if (fp != nullptr) throw InvalidInput("compare_runs: more than one FP run");
    fp = &s;
  }
  if (fp == nullptr) throw InvalidInput("compare_runs: no FP baseline run");
  if (fp->total_flops == 0) throw InvalidInput("compare_runs: FP baseline executed no steps");
  for (const auto& s : summaries) {
    if (!(s.model == fp->model) || s.task.kind != fp->task.kind ||
        s.task.vocab_size != fp->task.vocab_size || s.task.seq_len != fp->task.seq_len ||
        s.task.n_train != fp->task.n_train || s.task.n_val != fp->task.n_val) {
      throw InvalidInput("compare_runs: run " + std::string(method_name(s.method)) +
                         " uses a different model or task than the FP run");
    }
  }
  std::vector<ComparisonRow> rows;
  for (const auto& s : summaries) {
    ComparisonRow r;
    r.method = s.method;
    r.steps_executed = s.steps_executed;
    r.total_flops = s.total_flops;
    r.update_flops = s.update_flops;
    r.flops_ratio_vs_fp = static_cast<double>(s.total_flops) / static_cast<double>(fp->total_flops);
    r.wall_time_s = s.wall_time_s;
    if (s.wall_time_s && fp->wall_time_s && *s.wall_time_s > 0.0) {
      r.speedup_vs_fp = *fp->wall_time_s / *s.wall_time_s;
    }
    r.final_train_loss = s.final_train_loss;
    r.terminated_by = s.terminated_by;
    rows.push_back(r);
  }
  return rows;
}

std::string comparison_json(std::span<const ComparisonRow> rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["method"] = std::string(method_name(r.method));
    j["steps_executed"] = r.steps_executed;
    j["total_flops"] = r.total_flops;
    j["update_flops"] = r.update_flops;
    j["flops_ratio_vs_fp"] = r.flops_ratio_vs_fp;
    j["wall_time_s"] = r.wall_time_s ? nlohmann::ordered_json(*r.wall_time_s) : nlohmann::ordered_json(nullptr);
    j["speedup_vs_fp"] = r.speedup_vs_fp ? nlohmann::ordered_json(*r.speedup_vs_fp) : nlohmann::ordered_json(nullptr);
    j["final_train_loss"] = r.final_train_loss;
    j["terminated_by"] = std::string(termination_name(r.terminated_by));
    arr.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["schema_version"] = kTelemetrySchemaVersion;
  out["rows"] = std::move(arr);
  return out.dump(2) + "\n";
}

std::string comparison_csv(std::span<const ComparisonRow> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "method,steps_executed,total_flops,update_flops,flops_ratio_vs_fp,wall_time_s,speedup_vs_fp,"
         "final_train_loss,terminated_by\n";
  for (const auto& r : rows) {
    out << method_name(r.method) << ',' << r.steps_executed << ',' << r.total_flops << ','
        << r.update_flops << ',' << r.flops_ratio_vs_fp << ',';
    if (r.wall_time_s) out << *r.wall_time_s;
    out << ',';
    if (r.speedup_vs_fp) out << *r.speedup_vs_fp;
    out << ',' << r.final_train_loss << ',' << termination_name(r.terminated_by) << '\n';
  }
  return out.str();
}

std::vector<RunSummary> run_suite(const RunConfig& base, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<RunSummary> summaries;
  std::vector<std::filesystem::path> dirs;
  for (Method m : kAllMethods) {
    RunConfig cfg = base;
    cfg.method = m;
    if (uses_grades(m) && !cfg.grades) cfg.grades = GradEsSettings{};
    if (uses_es(m) && !cfg.es) cfg.es = EsConfig{};
    cfg.finalize();
    dirs.push_back(out_dir / std::string(method_name(m)));
    summaries.push_back(run_to_directory(cfg, dirs.back()));
  }
  const auto rows = compare_runs(summaries);
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    summaries[i].flops_ratio_vs_fp = rows[i].flops_ratio_vs_fp;
    summaries[i].speedup_vs_fp = rows[i].speedup_vs_fp;
    write_text_file(dirs[i] / "summary.json", summary_json(summaries[i]));
  }
  write_text_file(out_dir / "comparison.json", comparison_json(rows));
  write_text_file(out_dir / "comparison.csv", comparison_csv(rows));
  return summaries;
}

double suggest_tau(std::vector<double> metrics, double fraction) {
  if (metrics.empty()) throw InvalidInput("suggest_tau: no metrics");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidInput("suggest_tau: fraction must lie in [0, 1]");
  for (double m : metrics) {
    if (!std::isfinite(m) || m < 0.0) throw InvalidInput("suggest_tau: metrics must be finite and >= 0");
  }
  std::sort(metrics.begin(), metrics.end());
  const std::size_t n = metrics.size();
  const std::size_t k = ceil_fraction(fraction, n);  // components that should fall below tau
  if (k == 0) return metrics.front() / 2.0;
  if (k >= n) return metrics.back() > 0.0 ? metrics.back() * 2.0 : 1.0;
  return 0.5 * (metrics[k - 1] + metrics[k]);
}

template <std::floating_point T>
TauBracket tau_bracket(const RunConfig& cfg, double target_freeze_fraction) {
  RunConfig probe = cfg;
  probe.method = is_lora(cfg.method) ? Method::LoRA_GradES : Method::FP_GradES;
  GradEsSettings g = cfg.grades.value_or(GradEsSettings{});
  g.tau = 0.0;
  g.tau_lora = 0.0;
  g.role_tau.clear();
  g.layer_tau.clear();
  probe.grades = g;
  probe.finalize();
  const std::size_t grace = probe.grades_config().grace_step();
  if (grace >= probe.total_steps) {
    throw InvalidInput("tau_bracket: grace period covers every step; nothing to probe");
  }
  RunOptions<T> opts;
  opts.max_steps = grace + 1;
  const RunResult<T> r = run_experiment<T>(probe, opts);
  if (r.summary.terminated_by == Termination::Diverged) {
    throw NumericalError("tau_bracket: probe diverged: " + r.summary.error.value_or(""));
  }
  TauBracket out;
  out.probe_step = grace + 1;
  out.metrics = r.steps.back().metrics;
  std::vector<double> values;
  for (const auto& m : out.metrics) values.push_back(m.value);
  out.tau = suggest_tau(std::move(values), target_freeze_fraction);
  return out;
}

TauBracket tau_bracket_dispatch(const RunConfig& cfg, double target_freeze_fraction) {
  return cfg.precision == Precision::F32 ? tau_bracket<float>(cfg, target_freeze_fraction)
                                         : tau_bracket<double>(cfg, target_freeze_fraction);
}

template GradientBundle<float> batch_gradients<float>(const ModelParams<float>&, std::span<const Sequence>, double*);
template GradientBundle<double> batch_gradients<double>(const ModelParams<double>&, std::span<const Sequence>, double*);
template RunResult<float> run_experiment<float>(const RunConfig&, const RunOptions<float>&);
template RunResult<double> run_experiment<double>(const RunConfig&, const RunOptions<double>&);
template TauBracket tau_bracket<float>(const RunConfig&, double);
template TauBracket tau_bracket<double>(const RunConfig&, double);

}  // namespace grades_lab
