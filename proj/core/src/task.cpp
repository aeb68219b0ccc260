#include "grades_lab/task.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "grades_lab/error.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/rng.hpp"

namespace grades_lab {

std::string_view task_name(TaskKind k) noexcept {
  switch (k) {
    case TaskKind::Copy:
      return "copy";
    case TaskKind::Reverse:
      return "reverse";
    case TaskKind::ModularAdd:
      return "modular_add";
  }
  return "copy";
}

TaskKind parse_task(std::string_view s) {
  if (s == "copy") return TaskKind::Copy;
  if (s == "reverse") return TaskKind::Reverse;
  if (s == "modular_add") return TaskKind::ModularAdd;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

namespace {

// base^exp, saturating at uint64 max.
std::uint64_t saturating_pow(std::uint64_t base, std::size_t exp) {
  std::uint64_t out = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (out > std::numeric_limits<std::uint64_t>::max() / base) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    out *= base;
  }
  return out;
}

std::vector<int> decode_index(std::uint64_t index, std::size_t len, std::uint64_t base) {
  std::vector<int> out(len);
  for (std::size_t i = len; i-- > 0;) {
    out[i] = static_cast<int>(index % base) + 1;
    index /= base;
  }
  return out;
}

}  // namespace

void TaskSpec::validate() const {
  if (vocab_size < 3) throw ConfigError("task.vocab_size must be >= 3 (separator + 2 symbols)");
  if (seq_len == 0) throw ConfigError("task.seq_len must be >= 1");
  if (kind == TaskKind::ModularAdd && (seq_len < 2 || seq_len % 2 != 0)) {
    throw ConfigError("task.seq_len must be even and >= 2 for modular_add (two operands)");
  }
  if (n_train == 0 || n_val == 0) throw ConfigError("task.n_train and task.n_val must be >= 1");
  const std::uint64_t space = saturating_pow(vocab_size - 1, seq_len);
  if (space < n_train + n_val) {
    throw ConfigError("task: only " + std::to_string(space) + " distinct inputs exist but " +
                      std::to_string(n_train + n_val) + " are requested");
  }
}

std::size_t TaskSpec::target_len() const {
  return kind == TaskKind::ModularAdd ? seq_len / 2 : seq_len;
}

Example make_example(TaskKind kind, std::vector<int> input, std::size_t vocab_size) {
  Example ex;
  switch (kind) {
    case TaskKind::Copy:
      ex.target = input;
      break;
    case TaskKind::Reverse:
      ex.target.assign(input.rbegin(), input.rend());
      break;
    case TaskKind::ModularAdd: {
      const std::size_t k = input.size() / 2;
      const int base = static_cast<int>(vocab_size) - 1;
      ex.target.assign(k, 0);
      int carry = 0;
      for (std::size_t i = k; i-- > 0;) {
        const int s = (input[i] - 1) + (input[k + i] - 1) + carry;
        ex.target[i] = s % base + 1;
        carry = s / base;
      }
      break;
    }
  }
  ex.input = std::move(input);
  return ex;
}

Dataset gen_dataset(const TaskSpec& task) {
  task.validate();
  const std::uint64_t base = task.vocab_size - 1;
  const std::uint64_t space = saturating_pow(base, task.seq_len);
  const std::size_t needed = task.n_train + task.n_val;
  Rng rng(task.seed);

  std::vector<std::vector<int>> inputs;
  inputs.reserve(needed);
  if (space <= 1'000'000 && needed * 2 > space) {
    std::vector<std::uint64_t> all(space);
    std::iota(all.begin(), all.end(), std::uint64_t{0});
    // Fisher-Yates with our own draws so the order only depends on Rng.
    for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
    for (std::size_t i = 0; i < needed; ++i) inputs.push_back(decode_index(all[i], task.seq_len, base));
  } else {
    std::set<std::vector<int>> seen;
    while (inputs.size() < needed) {
      std::vector<int> in(task.seq_len);
      for (int& t : in) t = static_cast<int>(rng.below(base)) + 1;
      if (seen.insert(in).second) inputs.push_back(std::move(in));
    }
  }

  Dataset ds;
  for (std::size_t i = 0; i < needed; ++i) {
    auto ex = make_example(task.kind, std::move(inputs[i]), task.vocab_size);
    (i < task.n_train ? ds.train : ds.val).push_back(std::move(ex));
  }
  return ds;
}

Sequence encode(const Example& ex) {
  Sequence s;
  s.tokens = ex.input;
  s.tokens.push_back(kSeparatorToken);
  s.tokens.insert(s.tokens.end(), ex.target.begin(), ex.target.end() - 1);
  s.targets.assign(ex.input.size(), kIgnoreTarget);
  s.targets.insert(s.targets.end(), ex.target.begin(), ex.target.end());
  return s;
}

std::vector<Sequence> encode_all(const std::vector<Example>& examples) {
  std::vector<Sequence> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode(ex));
  return out;
}

}  // namespace grades_lab
