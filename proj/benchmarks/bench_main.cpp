#include <benchmark/benchmark.h>

#include <random>

#include "grades_lab/grades.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/norms.hpp"
#include "grades_lab/optimizer.hpp"
#include "grades_lab/task.hpp"
#include "grades_lab/trainer.hpp"

using namespace grades_lab;

namespace {

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Matrix<T> m(r, c);
  for (T& v : m.values()) v = static_cast<T>(d(eng));
  return m;
}

const ModelConfig kCopyModel{16, 32, 4, 2, 64, 16, 1};

std::vector<int> tokens(std::size_t n) {
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>((5 * i + 1) % 16);
  return t;
}

}  // namespace

template <typename T>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix<T>(n, n, 1), b = random_matrix<T>(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_nt(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK_TEMPLATE(BM_Matmul, float)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK_TEMPLATE(BM_Matmul, double)->Arg(32)->Arg(64)->Arg(128);

void BM_NormL1(benchmark::State& state) {
  const auto m = random_matrix<float>(64, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(norms::l1_elementwise(m));
}
BENCHMARK(BM_NormL1);

void BM_NormL1Diff(benchmark::State& state) {
  const auto a = random_matrix<float>(64, 32, 3), b = random_matrix<float>(64, 32, 4);
  for (auto _ : state) benchmark::DoNotOptimize(norms::l1_diff(a, b));
}
BENCHMARK(BM_NormL1Diff);

void BM_NormSpectral(benchmark::State& state) {
  const auto m = random_matrix<double>(64, 32, 5);
  for (auto _ : state) benchmark::DoNotOptimize(norms::spectral(m));
}
BENCHMARK(BM_NormSpectral);

template <typename T>
void BM_Forward(benchmark::State& state) {
  const auto p = init_params<T>(kCopyModel);
  const auto t = tokens(12);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, t));
}
BENCHMARK_TEMPLATE(BM_Forward, float);
BENCHMARK_TEMPLATE(BM_Forward, double);

template <typename T>
void BM_ForwardBackward(benchmark::State& state) {
  const auto p = init_params<T>(kCopyModel);
  const auto t = tokens(12);
  for (auto _ : state) {
    const auto f = forward(p, t);
    benchmark::DoNotOptimize(backward(p, f.cache, t));
  }
}
BENCHMARK_TEMPLATE(BM_ForwardBackward, float);
BENCHMARK_TEMPLATE(BM_ForwardBackward, double);

// One full training step: batch gradients, controller observation, update.
void BM_TrainStep(benchmark::State& state) {
  const TaskSpec task{TaskKind::Copy, 16, 6, 64, 8, 2};
  const auto train = encode_all(gen_dataset(task).train);
  auto p = init_params<float>(kCopyModel);
  GradEsConfig gc;
  gc.total_steps = 1u << 30;
  gc.tau = 0.0;
  auto ctl = GradEsController<float>::for_model(gc, p);
  Optimizer<float> opt(OptimizerConfig{});
  std::size_t step = 0, cursor = 0;
  for (auto _ : state) {
    const std::span<const Sequence> batch(train.data() + cursor, 4);
    cursor = (cursor + 4) % train.size();
    const auto g = batch_gradients(p, batch);
    ctl.observe_step(++step, g);
    apply_updates(p, g, 1e-3, ctl.frozen(), opt);
  }
}
BENCHMARK(BM_TrainStep);
BENCHMARK_MAIN();
