#include "grades_lab/telemetry.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace grades_lab {

using ojson = nlohmann::ordered_json;

std::string_view termination_name(Termination t) noexcept {
  switch (t) {
    case Termination::MaxSteps:
      return "max_steps";
    case Termination::AllFrozen:
      return "all_frozen";
    case Termination::EarlyStop:
      return "early_stop";
    case Termination::Diverged:
      return "diverged";
  }
  return "max_steps";
}

Termination parse_termination(std::string_view s) {
  for (Termination t : {Termination::MaxSteps, Termination::AllFrozen, Termination::EarlyStop,
                        Termination::Diverged}) {
    if (termination_name(t) == s) return t;
  }
  throw IoError("unknown termination '" + std::string(s) + "'");
}

namespace {

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

// NaN (diverged runs) is written as null.
ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

double read_number_or_nan(const ojson& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

std::optional<double> read_optional(const ojson& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

ComponentId component_from_name(const std::string& name) {
  auto id = parse_component_name(name);
  if (!id) throw IoError("telemetry: bad component name '" + name + "'");
  return *id;
}

ojson parse_json(std::string_view text, const char* what) {
  try {
    return ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw IoError(std::string(what) + ": " + e.what());
  }
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty()) fn(line);
    pos = end + 1;
  }
}

}  // namespace

std::string step_record_json(const StepRecord& r) {
  ojson j;
  j["type"] = "step";
  j["schema_version"] = kTelemetrySchemaVersion;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["lr"] = r.lr;
  ojson metrics = ojson::object();
  for (const auto& m : r.metrics) metrics[component_name(m.component)] = m.value;
  j["metrics"] = std::move(metrics);
  ojson newly = ojson::array();
  for (ComponentId id : r.newly_frozen) newly.push_back(component_name(id));
  j["newly_frozen"] = std::move(newly);
  j["frozen_count"] = r.frozen_count;
  j["frozen_fraction"] = r.frozen_fraction;
  j["flops"] = {{"forward", r.forward_flops},
                {"backward", r.backward_flops},
                {"update", r.update_flops},
                {"val", r.val_flops}};
  j["frozen_metric_above_tau"] = r.frozen_metric_above_tau;
  j["wall_time_ms"] = optional_number(r.wall_time_ms);
  return j.dump();
}

std::string val_check_json(const ValCheckRecord& r) {
  ojson j;
  j["type"] = "val_check";
  j["schema_version"] = kTelemetrySchemaVersion;
  j["step"] = r.step;
  j["val_loss"] = r.val_loss;
  j["best_val_loss"] = r.best_val_loss;
  j["checks_since_improvement"] = r.checks_since_improvement;
  j["decision"] = r.decision == EsDecision::Stop ? "stop" : "continue";
  return j.dump();
}

std::string freeze_event_json(const FreezeEvent& e) {
  ojson j;
  j["schema_version"] = kTelemetrySchemaVersion;
  j["step"] = e.step;
  j["layer"] = e.component.layer;
  j["role"] = std::string(role_name(e.component.role));
  j["metric"] = e.metric;
  j["tau"] = e.tau;
  return j.dump();
}

std::string summary_json(const RunSummary& s) {
  ojson j;
  j["schema_version"] = s.schema_version;
  j["method"] = std::string(method_name(s.method));
  j["precision"] = std::string(precision_name(s.precision));
  j["seed"] = s.seed;
  j["model"] = {{"vocab_size", s.model.vocab_size}, {"d_model", s.model.d_model},
                {"n_heads", s.model.n_heads},       {"n_layers", s.model.n_layers},
                {"d_ff", s.model.d_ff},             {"max_seq_len", s.model.max_seq_len}};
  j["task"] = {{"kind", std::string(task_name(s.task.kind))}, {"vocab_size", s.task.vocab_size},
               {"seq_len", s.task.seq_len}, {"n_train", s.task.n_train}, {"n_val", s.task.n_val}};
  j["total_steps"] = s.total_steps;
  j["steps_executed"] = s.steps_executed;
  j["terminated_by"] = std::string(termination_name(s.terminated_by));
  j["final_train_loss"] = number_or_null(s.final_train_loss);
  j["final_val_loss"] = number_or_null(s.final_val_loss);
  j["last_batch_loss"] = number_or_null(s.last_batch_loss);
  j["frozen_components"] = s.frozen_components;
  j["monitored_components"] = s.monitored_components;
  j["flops"] = {{"forward", s.forward_flops},
                {"backward", s.backward_flops},
                {"update", s.update_flops},
                {"val", s.val_flops}};
  j["total_flops"] = s.total_flops;
  j["flops_ratio_vs_fp"] = optional_number(s.flops_ratio_vs_fp);
  j["wall_time_s"] = optional_number(s.wall_time_s);
  j["speedup_vs_fp"] = optional_number(s.speedup_vs_fp);
  j["config_fingerprint"] = s.config_fingerprint;
  j["error"] = s.error ? ojson(*s.error) : ojson(nullptr);
  return j.dump(2) + "\n";
}

RunSummary parse_summary(std::string_view json_text) {
  const ojson j = parse_json(json_text, "summary.json");
  RunSummary s;
  try {
    s.schema_version = j.at("schema_version").get<int>();
    if (s.schema_version != kTelemetrySchemaVersion) {
      throw IoError("summary.json: unsupported schema_version " + std::to_string(s.schema_version));
    }
    s.method = parse_method(j.at("method").get<std::string>());
    s.precision = parse_precision(j.at("precision").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto& m = j.at("model");
    s.model.vocab_size = m.at("vocab_size").get<std::size_t>();
    s.model.d_model = m.at("d_model").get<std::size_t>();
    s.model.n_heads = m.at("n_heads").get<std::size_t>();
    s.model.n_layers = m.at("n_layers").get<std::size_t>();
    s.model.d_ff = m.at("d_ff").get<std::size_t>();
    s.model.max_seq_len = m.at("max_seq_len").get<std::size_t>();
    const auto& t = j.at("task");
    s.task.kind = parse_task(t.at("kind").get<std::string>());
    s.task.vocab_size = t.at("vocab_size").get<std::size_t>();
    s.task.seq_len = t.at("seq_len").get<std::size_t>();
    s.task.n_train = t.at("n_train").get<std::size_t>();
    s.task.n_val = t.at("n_val").get<std::size_t>();
    s.total_steps = j.at("total_steps").get<std::size_t>();
    s.steps_executed = j.at("steps_executed").get<std::size_t>();
    s.terminated_by = parse_termination(j.at("terminated_by").get<std::string>());
    s.final_train_loss = read_number_or_nan(j, "final_train_loss");
    s.final_val_loss = read_number_or_nan(j, "final_val_loss");
    s.last_batch_loss = read_number_or_nan(j, "last_batch_loss");
    s.frozen_components = j.at("frozen_components").get<std::size_t>();
    s.monitored_components = j.at("monitored_components").get<std::size_t>();
    const auto& f = j.at("flops");
    s.forward_flops = f.at("forward").get<std::uint64_t>();
    s.backward_flops = f.at("backward").get<std::uint64_t>();
    s.update_flops = f.at("update").get<std::uint64_t>();
    s.val_flops = f.at("val").get<std::uint64_t>();
    s.total_flops = j.at("total_flops").get<std::uint64_t>();
    s.flops_ratio_vs_fp = read_optional(j, "flops_ratio_vs_fp");
    s.wall_time_s = read_optional(j, "wall_time_s");
    s.speedup_vs_fp = read_optional(j, "speedup_vs_fp");
    s.config_fingerprint = j.value("config_fingerprint", "");
    if (auto it = j.find("error"); it != j.end() && !it->is_null()) s.error = it->get<std::string>();
  } catch (const ojson::exception& e) {
    throw IoError(std::string("summary.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("summary.json: ") + e.what());
  }
  return s;
}

std::vector<FreezeEvent> parse_freeze_log(std::string_view jsonl_text) {
  std::vector<FreezeEvent> out;
  for_each_line(jsonl_text, [&](std::string_view line) {
    const ojson j = parse_json(line, "freeze_log.jsonl");
    try {
      FreezeEvent e;
      e.step = j.at("step").get<std::size_t>();
      e.component.layer = j.at("layer").get<int>();
      auto role = parse_role(j.at("role").get<std::string>());
      if (!role) throw IoError("freeze_log.jsonl: unknown role");
      e.component.role = *role;
      e.metric = j.at("metric").get<double>();
      e.tau = j.at("tau").get<double>();
      out.push_back(e);
    } catch (const ojson::exception& e) {
      throw IoError(std::string("freeze_log.jsonl: ") + e.what());
    }
  });
  return out;
}

std::vector<StepRecord> parse_metrics(std::string_view jsonl_text) {
  std::vector<StepRecord> out;
  for_each_line(jsonl_text, [&](std::string_view line) {
    const ojson j = parse_json(line, "metrics.jsonl");
    try {
      if (j.at("type").get<std::string>() != "step") return;
      StepRecord r;
      r.step = j.at("step").get<std::size_t>();
      r.train_loss = j.at("train_loss").get<double>();
      r.lr = j.at("lr").get<double>();
      for (const auto& [name, v] : j.at("metrics").items()) {
        r.metrics.push_back({component_from_name(name), v.get<double>()});
      }
      for (const auto& n : j.at("newly_frozen")) r.newly_frozen.push_back(component_from_name(n.get<std::string>()));
      r.frozen_count = j.at("frozen_count").get<std::size_t>();
      r.frozen_fraction = j.at("frozen_fraction").get<double>();
      const auto& f = j.at("flops");
      r.forward_flops = f.at("forward").get<std::uint64_t>();
      r.backward_flops = f.at("backward").get<std::uint64_t>();
      r.update_flops = f.at("update").get<std::uint64_t>();
      r.val_flops = f.at("val").get<std::uint64_t>();
      r.frozen_metric_above_tau = j.at("frozen_metric_above_tau").get<bool>();
      r.wall_time_ms = read_optional(j, "wall_time_ms");
      out.push_back(std::move(r));
    } catch (const ojson::exception& e) {
      throw IoError(std::string("metrics.jsonl: ") + e.what());
    }
  });
  return out;
}

std::string metrics_csv(std::span<const StepRecord> records, std::span<const ComponentId> components) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "step,train_loss,lr,frozen_count,frozen_fraction,forward_flops,backward_flops,update_flops,val_flops";
  for (ComponentId id : components) out << ',' << component_name(id);
  out << '\n';
  for (const auto& r : records) {
    out << r.step << ',' << r.train_loss << ',' << r.lr << ',' << r.frozen_count << ','
        << r.frozen_fraction << ',' << r.forward_flops << ',' << r.backward_flops << ','
        << r.update_flops << ',' << r.val_flops;
    std::map<ComponentId, double> by_id;
    for (const auto& m : r.metrics) by_id.emplace(m.component, m.value);
    for (ComponentId id : components) {
      out << ',';
      if (auto it = by_id.find(id); it != by_id.end()) out << it->second;
    }
    out << '\n';
  }
  return out.str();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace grades_lab
