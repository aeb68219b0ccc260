#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace grades_lab {

enum class TaskKind { Copy, Reverse, ModularAdd };

std::string_view task_name(TaskKind k) noexcept;
TaskKind parse_task(std::string_view s);

// Token 0 is the separator; data symbols use tokens 1 .. vocab_size-1.
inline constexpr int kSeparatorToken = 0;

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t vocab_size = 16;
  std::size_t seq_len = 6;  // input length
  std::size_t n_train = 256;
  std::size_t n_val = 32;
  std::uint64_t seed = 1;

  // Throws ConfigError when the task cannot be generated as specified.
  void validate() const;
  std::size_t target_len() const;
  // Tokens in one encoded training sequence.
  std::size_t stream_len() const { return seq_len + target_len(); }
};

struct Example {
  std::vector<int> input;
  std::vector<int> target;
  friend bool operator==(const Example&, const Example&) = default;
};

// Next-token training stream for an example with n input and m target symbols:
//   tokens  = input ++ [SEP] ++ target[0 .. m-2]
//   targets = [ignore] * n ++ target
// so only the target symbols are scored.
struct Sequence {
  std::vector<int> tokens;
  std::vector<int> targets;
  friend bool operator==(const Sequence&, const Sequence&) = default;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> val;
};

// Copy: target = input. Reverse: target = reversed input. ModularAdd: the
// input holds the base-(vocab-1) digits of a and b (seq_len/2 each, most
// significant first) and the target the digits of (a + b) mod base^(seq_len/2).
// Train and val examples are distinct inputs, drawn without replacement.
Dataset gen_dataset(const TaskSpec& task);

Example make_example(TaskKind kind, std::vector<int> input, std::size_t vocab_size);

Sequence encode(const Example& ex);
std::vector<Sequence> encode_all(const std::vector<Example>& examples);

}  // namespace grades_lab
