#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "grades_lab/earlystop.hpp"
#include "grades_lab/error.hpp"
#include "grades_lab/trainer.hpp"
#include "oracles.hpp"

using namespace grades_lab;

namespace {

std::vector<EsDecision> feed(const std::vector<double>& losses, const EsConfig& cfg, EsState& st) {
  std::vector<EsDecision> out;
  for (std::size_t i = 0; i < losses.size(); ++i) out.push_back(es_check(st, (i + 1) * 10, losses[i], cfg));
  return out;
}

}  // namespace

TEST(EsCheck, StopsAfterPatienceChecksWithoutImprovement) {
  EsConfig cfg{0.1, 3, 0.0};
  EsState st;
  const auto d = feed({1.0, 0.9, 0.9, 0.95, 0.9}, cfg, st);
  EXPECT_EQ(d, (std::vector<EsDecision>{EsDecision::Continue, EsDecision::Continue, EsDecision::Continue,
                                        EsDecision::Continue, EsDecision::Stop}));
  EXPECT_EQ(st.best_val_loss, 0.9);
  EXPECT_EQ(st.best_step, 20u);
  EXPECT_EQ(st.history.size(), 5u);
}

TEST(EsCheck, ImprovementMustExceedMinDelta) {
  EsConfig cfg{0.1, 2, 0.1};
  EsState st;
  const auto d = feed({1.0, 0.95, 0.9, 0.5}, cfg, st);
  // 0.9 is exactly best - min_delta, which does not count.
  EXPECT_EQ(d[2], EsDecision::Stop);
  EXPECT_EQ(st.history[2].second, 0.9);
  EXPECT_EQ(st.best_step, 40u);
  EsState st2;
  const auto d2 = feed({1.0, 0.95, 0.5, 0.45, 0.41}, cfg, st2);
  EXPECT_EQ(d2.back(), EsDecision::Stop);
  EXPECT_EQ(st2.best_step, 30u);
}

TEST(EsCheck, MonotoneImprovementNeverStops) {
  EsConfig cfg{0.1, 1, 0.0};
  EsState st;
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(1.0 / (i + 1));
  for (EsDecision d : feed(losses, cfg, st)) EXPECT_EQ(d, EsDecision::Continue);
}

TEST(EsCheck, RejectsNonFiniteLossAndBadConfig) {
  EsState st;
  EXPECT_THROW(es_check(st, 1, std::numeric_limits<double>::quiet_NaN(), EsConfig{}), NumericalError);
  EXPECT_THROW((EsConfig{0.0, 3, 0.0}.validate()), ConfigError);
  EXPECT_THROW((EsConfig{0.1, 0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((EsConfig{0.1, 1, -1.0}.validate()), ConfigError);
  EXPECT_EQ((EsConfig{0.05, 3, 0.0}.interval(2000)), 100u);
  EXPECT_EQ((EsConfig{0.05, 3, 0.0}.interval(10)), 1u);
}

TEST(ValidationLoss, MatchesScalarOracle) {
  TaskSpec task{TaskKind::Reverse, 10, 4, 8, 6, 31};
  const auto data = gen_dataset(task);
  const auto val = encode_all(data.val);
  const auto p = init_params<double>(ModelConfig{10, 8, 2, 2, 12, 8, 31});
  const auto op = oracle::copy_params(p);
  double expect = 0.0;
  for (const auto& s : val) expect += oracle::cross_entropy(oracle::forward(op, s.tokens), s.targets);
  expect /= static_cast<double>(val.size());
  EXPECT_NEAR(validation_loss(p, std::span<const Sequence>(val)), expect, 1e-12);
  EXPECT_THROW(validation_loss(p, std::span<const Sequence>()), InvalidInput);
}

TEST(ValidationLoss, ChargesOnlyTheValidationCounter) {
  TaskSpec task{TaskKind::Copy, 10, 3, 8, 5, 2};
  const auto val = encode_all(gen_dataset(task).val);
  const auto p = init_params<double>(ModelConfig{10, 8, 2, 2, 12, 8, 2});
  flops::CostModel cost;
  cost.model = p.config;
  cost.seq_len = task.stream_len();
  flops::CostLedger ledger;
  validation_loss(p, std::span<const Sequence>(val), &ledger, &cost, 7);
  EXPECT_EQ(ledger.val_flops, 5 * cost.forward_per_sequence());
  EXPECT_EQ(ledger.forward_flops + ledger.backward_flops + ledger.update_flops, 0u);
}

TEST(EsTraining, StopsOnlyAfterPatiencePlusOneChecks) {
  auto cfg = fixture::tiny_run(Method::FP_ES, 400);
  cfg.es = EsConfig{0.025, 2, 0.05};
  cfg.finalize();
  const auto r = run_experiment<double>(cfg);
  ASSERT_EQ(r.summary.terminated_by, Termination::EarlyStop);
  EXPECT_GE(r.val_checks.size(), cfg.es->patience + 1);
  EXPECT_LT(r.summary.steps_executed, 400u);
  EXPECT_EQ(r.summary.steps_executed % cfg.es->interval(400), 0u);
  EXPECT_EQ(r.val_checks.back().decision, EsDecision::Stop);
  EXPECT_EQ(r.val_checks.back().checks_since_improvement, cfg.es->patience);
}

TEST(EsTraining, ValidationCostIsExactlyChecksTimesValSetForwards) {
  auto cfg = fixture::tiny_run(Method::FP_ES, 60);
  const auto r = run_experiment<double>(cfg);
  const auto plain = run_experiment<double>(fixture::tiny_run(Method::FP, 60));
  const auto cost = cost_model_for(cfg);
  const std::uint64_t per_check = cfg.task.n_val * cost.forward_per_sequence();
  EXPECT_EQ(r.summary.val_flops, r.val_checks.size() * per_check);
  EXPECT_EQ(r.summary.total_flops, r.summary.forward_flops + r.summary.backward_flops +
                                       r.summary.update_flops + r.summary.val_flops);
  if (r.summary.steps_executed == plain.summary.steps_executed) {
    EXPECT_EQ(r.summary.total_flops - plain.summary.total_flops, r.summary.val_flops);
  }
  EXPECT_EQ(plain.summary.val_flops, 0u);
}
