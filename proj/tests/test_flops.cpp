#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <sstream>

#include "fixtures.hpp"
#include "grades_lab/error.hpp"
#include "grades_lab/flops.hpp"
#include "grades_lab/trainer.hpp"

using namespace grades_lab;
using namespace grades_lab::flops;

namespace {

struct ManifestTotals {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::size_t lines = 0;
};

ManifestTotals read_manifest() {
  std::ifstream in(std::string(GRADES_LAB_GOLDEN_DIR) + "/flops_manifest.txt");
  ManifestTotals t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string phase, name;
    std::uint64_t m = 0, n = 0, k = 0;
    ss >> phase >> name >> m >> n >> k;
    (phase == "forward" ? t.forward : t.backward) += 2 * m * n * k;
    ++t.lines;
  }
  return t;
}

CostModel manifest_cost() {
  CostModel c;
  c.model = ModelConfig{16, 32, 4, 2, 64, 16, 1};
  c.seq_len = 16;
  c.batch_size = 1;
  return c;
}

std::vector<int> tokens(std::size_t n, std::size_t vocab) {
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>((7 * i + 3) % vocab);
  return t;
}

}  // namespace

TEST(MatmulFlops, Examples) {
  EXPECT_EQ(matmul_flops(1, 1, 1), 2u);
  EXPECT_EQ(matmul_flops(2, 3, 4), 48u);
  EXPECT_EQ(matmul_flops(16, 32, 32), 32768u);
  EXPECT_THROW(matmul_flops(0, 3, 4), InvalidInput);
  EXPECT_THROW(matmul_flops(3, 4, 0), InvalidInput);
  const std::uint64_t big = std::uint64_t{1} << 22;
  EXPECT_THROW(matmul_flops(big, big, big), NumericalError);
  EXPECT_THROW(checked_add(std::numeric_limits<std::uint64_t>::max(), 1), NumericalError);
}

TEST(CostModel, MatchesHandWrittenManifest) {
  const auto m = read_manifest();
  EXPECT_EQ(m.lines, 93u);
  const auto c = manifest_cost();
  EXPECT_EQ(c.forward_per_sequence(), m.forward);
  EXPECT_EQ(c.backward_per_sequence(), m.backward);
}

TEST(CostModel, MatchesKernelTallyInFullMode) {
  const auto c = manifest_cost();
  const auto p = init_params<double>(c.model);
  const auto toks = tokens(16, 16);
  FlopTallyScope fwd_scope;
  const auto fwd = forward(p, toks);
  const std::uint64_t after_forward = fwd_scope.count();
  (void)backward(p, fwd.cache, toks);
  EXPECT_EQ(after_forward, c.forward_per_sequence());
  EXPECT_EQ(fwd_scope.count(), c.forward_per_sequence() + c.backward_per_sequence());
  EXPECT_EQ(fwd_scope.count(), read_manifest().forward + read_manifest().backward);
}

TEST(CostModel, MatchesKernelTallyInLoraMode) {
  auto c = manifest_cost();
  c.mode = TrainingMode::Lora;
  c.lora_rank = 4;
  c.lora_roles = {Role::Q, Role::V, Role::Down};
  auto p = init_params<float>(c.model);
  attach_adapters(p, 4, 1.0, std::span<const Role>(c.lora_roles), 2);
  const auto toks = tokens(11, 16);
  FlopTallyScope scope;
  const auto fwd = forward(p, toks);
  EXPECT_EQ(scope.count(), c.forward_per_sequence(11));
  (void)backward(p, fwd.cache, toks);
  EXPECT_EQ(scope.count(), c.forward_per_sequence(11) + c.backward_per_sequence(11));
}

TEST(ChargeStep, FrozenSetOnlyAffectsUpdates) {
  auto c = manifest_cost();
  c.batch_size = 3;
  CostLedger none, all;
  const auto ids = all_components(2);
  charge_step(none, c, {}, 1);
  charge_step(all, c, std::set<ComponentId>(ids.begin(), ids.end()), 1);
  EXPECT_EQ(none.forward_flops, all.forward_flops);
  EXPECT_EQ(none.backward_flops, all.backward_flops);
  EXPECT_EQ(none.forward_flops, 3 * c.forward_per_sequence());
  // 16 per element: monitored 2 * (4*32*32 + 3*32*64); unmonitored 16*32*2 + 16*32 + 5*32.
  EXPECT_EQ(none.update_flops, 16u * (2 * (4 * 1024 + 3 * 2048) + 1024 + 512 + 160));
  EXPECT_EQ(all.update_flops, 16u * (1024 + 512 + 160));
  c.optimizer = OptimizerKind::SGD;
  EXPECT_EQ(c.update_per_step({}), 2u * (2 * (4 * 1024 + 3 * 2048) + 1024 + 512 + 160));
}

TEST(ChargeStep, LoraUpdatesOnlyAdapters) {
  auto c = manifest_cost();
  c.mode = TrainingMode::Lora;
  c.lora_rank = 2;
  c.lora_roles = {Role::Q, Role::Up};
  // Q: 2*(32+32), Up: 2*(32+64), per layer, two layers.
  EXPECT_EQ(c.update_per_step({}), 16u * 2 * (128 + 192));
  EXPECT_EQ(c.update_per_step({{0, Role::Q}, {1, Role::K}}), 16u * (128 + 2 * 192));
}

TEST(TrainingLedger, PlainRunClosedForm) {
  const auto cfg = fixture::tiny_run(Method::FP, 100);
  const auto r = run_experiment<double>(cfg);
  const auto c = cost_model_for(cfg);
  ASSERT_EQ(r.summary.steps_executed, 100u);
  EXPECT_EQ(r.summary.forward_flops, 100 * cfg.batch_size * c.forward_per_sequence());
  EXPECT_EQ(r.summary.backward_flops, 100 * cfg.batch_size * c.backward_per_sequence());
  EXPECT_EQ(r.summary.update_flops, 100 * c.update_per_step({}));
  EXPECT_EQ(r.summary.val_flops, 0u);
  EXPECT_EQ(r.summary.total_flops, r.ledger.total());
}

TEST(TrainingLedger, UpdateChargesFollowTheFreezeLog) {
  auto cfg = fixture::tiny_run(Method::FP_GradES, 80);
  cfg.grades->tau = tau_bracket<double>(cfg, 0.5).tau;
  cfg.finalize();
  const auto r = run_experiment<double>(cfg);
  const auto c = cost_model_for(cfg);
  const auto sets = replay_frozen_sets(r.freeze_log, r.summary.steps_executed);
  std::uint64_t expect = 0;
  for (const auto& s : sets) expect += c.update_per_step(s);
  EXPECT_FALSE(r.freeze_log.empty());
  EXPECT_EQ(r.summary.update_flops, expect);
  EXPECT_LT(r.summary.update_flops, r.summary.steps_executed * c.update_per_step({}));
  std::uint64_t running = 0;
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    running += r.ledger.per_step[i].update;
    EXPECT_EQ(r.steps[i].update_flops, running);
  }
}
