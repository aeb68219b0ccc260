#pragma once

#include <cstddef>
#include <cstdint>

#include "grades_lab/config.hpp"

namespace fixture {

// Small Copy-task run that trains in well under a second.
inline grades_lab::RunConfig tiny_run(grades_lab::Method method, std::size_t total_steps = 40,
                                      std::uint64_t seed = 1) {
  using namespace grades_lab;
  RunConfig c;
  c.method = method;
  c.precision = Precision::F64;
  c.seed = seed;
  c.total_steps = total_steps;
  c.batch_size = 2;
  c.model = ModelConfig{8, 16, 2, 2, 32, 8, 0};
  c.task = TaskSpec{TaskKind::Copy, 8, 3, 16, 4, 0};
  c.lr = 3e-3;
  c.lora_lr = 1e-2;
  c.lora.rank = 2;
  c.grades = GradEsSettings{};
  c.es = EsConfig{};
  c.telemetry.wall_clock = false;
  c.finalize();
  return c;
}

}  // namespace fixture
