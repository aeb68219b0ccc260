#include "grades_lab/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace grades_lab {

using nlohmann::json;

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::FP:
      return "fp";
    case Method::FP_GradES:
      return "fp_grades";
    case Method::FP_ES:
      return "fp_es";
    case Method::LoRA:
      return "lora";
    case Method::LoRA_GradES:
      return "lora_grades";
    case Method::LoRA_ES:
      return "lora_es";
  }
  return "fp";
}

Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (method_name(m) == s) return m;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

bool is_lora(Method m) noexcept {
  return m == Method::LoRA || m == Method::LoRA_GradES || m == Method::LoRA_ES;
}
bool uses_grades(Method m) noexcept { return m == Method::FP_GradES || m == Method::LoRA_GradES; }
bool uses_es(Method m) noexcept { return m == Method::FP_ES || m == Method::LoRA_ES; }

std::string_view precision_name(Precision p) noexcept { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

void RunConfig::finalize() {
  model.seed = seed;
  task.seed = seed + 1;
  validate();
}

void RunConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
  }
  model.validate();
  task.validate();
  if (total_steps == 0) throw ConfigError("total_steps must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (task.vocab_size != model.vocab_size) {
    throw ConfigError("task.vocab_size (" + std::to_string(task.vocab_size) +
                      ") must equal model.vocab_size (" + std::to_string(model.vocab_size) + ")");
  }
  if (task.stream_len() > model.max_seq_len) {
    throw ConfigError("encoded task sequences have " + std::to_string(task.stream_len()) +
                      " tokens but model.max_seq_len is " + std::to_string(model.max_seq_len));
  }
  if (!(lr > 0.0) || !(lora_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (!(schedule.warmup_fraction >= 0.0 && schedule.warmup_fraction < 1.0)) {
    throw ConfigError("optimizer.warmup_fraction must lie in [0, 1)");
  }
  if (uses_grades(method) && !grades) {
    throw ConfigError("method " + std::string(method_name(method)) + " requires a 'grades' section");
  }
  if (uses_es(method) && !es) {
    throw ConfigError("method " + std::string(method_name(method)) + " requires an 'es' section");
  }
  if (grades) grades_config().validate();
  if (es) es->validate();
  if (is_lora(method)) {
    const std::size_t max_rank = std::min(model.d_model, model.d_ff);
    if (lora.rank == 0 || lora.rank > max_rank) {
      throw ConfigError("lora.rank must lie in [1, " + std::to_string(max_rank) + "]");
    }
  }
}

GradEsConfig RunConfig::grades_config() const {
  const GradEsSettings s = grades.value_or(GradEsSettings{});
  GradEsConfig g;
  g.alpha = s.alpha;
  g.total_steps = total_steps;
  g.normalize_by_size = s.normalize_by_size;
  g.role_tau = s.role_tau;
  g.layer_tau = s.layer_tau;
  if (is_lora(method)) {
    g.tau = s.tau_lora;
    g.metric_mode = s.lora_metric_mode;
  } else {
    g.tau = s.tau;
    g.metric_mode = s.metric_mode;
  }
  return g;
}

namespace {

void reject_unknown(const json& j, std::string_view section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + std::string(section) + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) {
      throw ConfigError("unknown key '" + k + "' in config section '" + std::string(section) + "'");
    }
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

std::vector<Role> parse_roles(const json& arr) {
  std::vector<Role> roles;
  for (const auto& r : arr) {
    auto role = parse_role(r.get<std::string>());
    if (!role) throw ConfigError("unknown role '" + r.get<std::string>() + "'");
    roles.push_back(*role);
  }
  return roles;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "root",
                 {"schema_version", "name", "method", "precision", "seed", "total_steps", "batch_size",
                  "model", "task", "optimizer", "lora", "grades", "es", "telemetry"});
  RunConfig c;
  if (!j.contains("schema_version")) throw ConfigError("config is missing schema_version");
  read(j, "schema_version", c.schema_version);
  std::string s;
  if (j.contains("method")) {
    read(j, "method", s);
    c.method = parse_method(s);
  }
  if (j.contains("precision")) {
    read(j, "precision", s);
    c.precision = parse_precision(s);
  }
  read(j, "seed", c.seed);
  read(j, "total_steps", c.total_steps);
  read(j, "batch_size", c.batch_size);

  if (auto it = j.find("model"); it != j.end()) {
    reject_unknown(*it, "model", {"vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_seq_len"});
    read(*it, "vocab_size", c.model.vocab_size);
    read(*it, "d_model", c.model.d_model);
    read(*it, "n_heads", c.model.n_heads);
    read(*it, "n_layers", c.model.n_layers);
    read(*it, "d_ff", c.model.d_ff);
    read(*it, "max_seq_len", c.model.max_seq_len);
  }
  c.task.vocab_size = c.model.vocab_size;
  if (auto it = j.find("task"); it != j.end()) {
    reject_unknown(*it, "task", {"kind", "vocab_size", "seq_len", "n_train", "n_val"});
    if (it->contains("kind")) {
      read(*it, "kind", s);
      c.task.kind = parse_task(s);
    }
    read(*it, "vocab_size", c.task.vocab_size);
    read(*it, "seq_len", c.task.seq_len);
    read(*it, "n_train", c.task.n_train);
    read(*it, "n_val", c.task.n_val);
  }
  if (auto it = j.find("optimizer"); it != j.end()) {
    reject_unknown(*it, "optimizer",
                   {"kind", "lr", "lora_lr", "schedule", "warmup_fraction", "beta1", "beta2", "eps",
                    "weight_decay"});
    if (it->contains("kind")) {
      read(*it, "kind", s);
      c.optimizer.kind = parse_optimizer(s);
    }
    if (it->contains("schedule")) {
      read(*it, "schedule", s);
      c.schedule.kind = parse_schedule(s);
    }
    read(*it, "lr", c.lr);
    read(*it, "lora_lr", c.lora_lr);
    read(*it, "warmup_fraction", c.schedule.warmup_fraction);
    read(*it, "beta1", c.optimizer.beta1);
    read(*it, "beta2", c.optimizer.beta2);
    read(*it, "eps", c.optimizer.eps);
    read(*it, "weight_decay", c.optimizer.weight_decay);
  }
  if (auto it = j.find("lora"); it != j.end()) {
    reject_unknown(*it, "lora", {"rank", "scale", "roles"});
    read(*it, "rank", c.lora.rank);
    read(*it, "scale", c.lora.scale);
    if (it->contains("roles")) c.lora.roles = parse_roles(it->at("roles"));
  }
  if (auto it = j.find("grades"); it != j.end()) {
    reject_unknown(*it, "grades",
                   {"alpha", "tau", "tau_lora", "metric_mode", "lora_metric_mode", "normalize_by_size",
                    "role_tau", "layer_tau"});
    GradEsSettings g;
    read(*it, "alpha", g.alpha);
    read(*it, "tau", g.tau);
    read(*it, "tau_lora", g.tau_lora);
    if (it->contains("metric_mode")) {
      read(*it, "metric_mode", s);
      g.metric_mode = parse_metric_mode(s);
    }
    if (it->contains("lora_metric_mode")) {
      read(*it, "lora_metric_mode", s);
      g.lora_metric_mode = parse_metric_mode(s);
    }
    read(*it, "normalize_by_size", g.normalize_by_size);
    if (auto rt = it->find("role_tau"); rt != it->end()) {
      for (const auto& [k, v] : rt->items()) {
        auto role = parse_role(k);
        if (!role) throw ConfigError("unknown role '" + k + "' in grades.role_tau");
        g.role_tau[*role] = v.get<double>();
      }
    }
    if (auto lt = it->find("layer_tau"); lt != it->end()) {
      for (const auto& [k, v] : lt->items()) {
        try {
          g.layer_tau[std::stoi(k)] = v.get<double>();
        } catch (const std::exception&) {
          throw ConfigError("grades.layer_tau keys must be layer indices, got '" + k + "'");
        }
      }
    }
    c.grades = g;
  }
  if (auto it = j.find("es"); it != j.end()) {
    reject_unknown(*it, "es", {"interval_fraction", "patience", "min_delta"});
    EsConfig e;
    read(*it, "interval_fraction", e.interval_fraction);
    read(*it, "patience", e.patience);
    read(*it, "min_delta", e.min_delta);
    c.es = e;
  }
  if (auto it = j.find("telemetry"); it != j.end()) {
    reject_unknown(*it, "telemetry", {"wall_clock", "checkpoint", "csv"});
    read(*it, "wall_clock", c.telemetry.wall_clock);
    read(*it, "checkpoint", c.telemetry.checkpoint);
    read(*it, "csv", c.telemetry.csv);
  }
  c.finalize();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["method"] = std::string(method_name(c.method));
  j["precision"] = std::string(precision_name(c.precision));
  j["seed"] = c.seed;
  j["total_steps"] = c.total_steps;
  j["batch_size"] = c.batch_size;
  j["model"] = {{"vocab_size", c.model.vocab_size}, {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},       {"n_layers", c.model.n_layers},
                {"d_ff", c.model.d_ff},             {"max_seq_len", c.model.max_seq_len}};
  j["task"] = {{"kind", std::string(task_name(c.task.kind))}, {"vocab_size", c.task.vocab_size},
               {"seq_len", c.task.seq_len}, {"n_train", c.task.n_train}, {"n_val", c.task.n_val}};
  j["optimizer"] = {{"kind", std::string(optimizer_name(c.optimizer.kind))},
                    {"lr", c.lr},
                    {"lora_lr", c.lora_lr},
                    {"schedule", std::string(schedule_name(c.schedule.kind))},
                    {"warmup_fraction", c.schedule.warmup_fraction},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  json roles = json::array();
  for (Role r : c.lora.roles) roles.push_back(std::string(role_name(r)));
  j["lora"] = {{"rank", c.lora.rank}, {"scale", c.lora.scale}, {"roles", roles}};
  if (c.grades) {
    const auto& g = *c.grades;
    json role_tau = json::object(), layer_tau = json::object();
    for (const auto& [r, t] : g.role_tau) role_tau[std::string(role_name(r))] = t;
    for (const auto& [l, t] : g.layer_tau) layer_tau[std::to_string(l)] = t;
    j["grades"] = {{"alpha", g.alpha},
                   {"tau", g.tau},
                   {"tau_lora", g.tau_lora},
                   {"metric_mode", std::string(metric_mode_name(g.metric_mode))},
                   {"lora_metric_mode", std::string(metric_mode_name(g.lora_metric_mode))},
                   {"normalize_by_size", g.normalize_by_size},
                   {"role_tau", role_tau},
                   {"layer_tau", layer_tau}};
  }
  if (c.es) {
    j["es"] = {{"interval_fraction", c.es->interval_fraction},
               {"patience", c.es->patience},
               {"min_delta", c.es->min_delta}};
  }
  j["telemetry"] = {{"wall_clock", c.telemetry.wall_clock},
                    {"checkpoint", c.telemetry.checkpoint},
                    {"csv", c.telemetry.csv}};
  return j.dump(2);
}

}  // namespace grades_lab
