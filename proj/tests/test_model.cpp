#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "grades_lab/checkpoint.hpp"
#include "grades_lab/error.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/norms.hpp"
#include "grades_lab/verify.hpp"
#include "oracles.hpp"

using namespace grades_lab;

namespace {

ModelConfig small_config(std::uint64_t seed = 1) { return ModelConfig{16, 8, 2, 2, 16, 8, seed}; }

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::vector<int> t(n);
  for (auto& v : t) v = static_cast<int>(eng() % vocab);
  return t;
}

// Same closed-form recipe as tests/golden/make_forward_golden.py.
ModelParams<double> recipe_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<double> p = init_params<double>(cfg);
  std::size_t k = 0;
  p.base.for_each([&](const std::string& name, std::optional<ComponentId>, Matrix<double>& m) {
    const bool gain = name.ends_with("norm");
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) {
        const double ph = static_cast<double>(seed) * 1.37 + static_cast<double>(k) * 2.11 +
                          static_cast<double>(i * m.cols() + j) * 0.731;
        m(i, j) = gain ? 1.0 + 0.1 * std::cos(ph) : 0.3 * std::sin(ph) / std::sqrt(static_cast<double>(m.cols()));
      }
    ++k;
  });
  return p;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  const auto a = init_params<float>(small_config(1));
  const auto b = init_params<float>(small_config(1));
  EXPECT_TRUE(a == b);
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  const auto c = init_params<float>(small_config(2));
  EXPECT_FALSE(a == c);
}

TEST(InitParams, TruncatedAtTwoSigma) {
  const auto p = init_params<double>(ModelConfig{16, 32, 4, 2, 64, 16, 3});
  for (ComponentId id : all_components(2)) {
    for (double v : p.base.at(id).values()) {
      EXPECT_LE(std::fabs(v), 0.04);
    }
  }
  for (double v : p.base.layers[0].attn_norm.values()) EXPECT_EQ(v, 1.0);
}

TEST(InitParams, LayoutCoversSevenRolesPerLayer) {
  const auto p = init_params<double>(small_config());
  std::vector<std::string> monitored;
  p.base.for_each([&](const std::string& name, std::optional<ComponentId> id, const Matrix<double>&) {
    if (id) monitored.push_back(name);
  });
  ASSERT_EQ(monitored.size(), 14u);
  EXPECT_EQ(monitored.front(), "layer.0.q");
  EXPECT_EQ(monitored.back(), "layer.1.down");
  EXPECT_EQ(p.base.at({0, Role::Gate}).shape(), (Shape{16, 8}));
  EXPECT_EQ(p.base.at({1, Role::Down}).shape(), (Shape{8, 16}));
  EXPECT_THROW(p.base.at({2, Role::Q}), ContractError);
}

TEST(Forward, SingleTokenShape) {
  const auto p = init_params<float>(small_config());
  const auto r = forward(p, std::vector<int>{3});
  EXPECT_EQ(r.logits.shape(), (Shape{1, 16}));
}

TEST(Forward, RejectsBadTokens) {
  const auto p = init_params<float>(small_config());
  EXPECT_THROW(forward(p, std::vector<int>{16}), InvalidInput);
  EXPECT_THROW(forward(p, std::vector<int>{-1}), InvalidInput);
  EXPECT_THROW(forward(p, std::vector<int>{}), InvalidInput);
  EXPECT_THROW(forward(p, std::vector<int>(9, 1)), InvalidInput);
}

TEST(Forward, CausalMasking) {
  const auto p = recipe_params(small_config(), 3);
  auto toks = random_tokens(7, 16, 4);
  const auto a = forward(p, toks).logits;
  toks[5] = (toks[5] + 3) % 16;
  toks[6] = (toks[6] + 7) % 16;
  const auto b = forward(p, toks).logits;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t v = 0; v < 16; ++v) EXPECT_EQ(a(t, v), b(t, v));
  bool changed = false;
  for (std::size_t v = 0; v < 16; ++v) changed = changed || a(5, v) != b(5, v);
  EXPECT_TRUE(changed);
}

TEST(Forward, MatchesGoldenFile) {
  std::ifstream in(std::string(GRADES_LAB_GOLDEN_DIR) + "/forward_golden.json");
  ASSERT_TRUE(in.good());
  const auto g = nlohmann::json::parse(in);
  const ModelConfig cfg{g["vocab_size"], g["d_model"], g["n_heads"], g["n_layers"], g["d_ff"], g["max_seq_len"], 0};
  const auto p = recipe_params(cfg, g["seed"].get<std::uint64_t>());
  const auto tokens = g["tokens"].get<std::vector<int>>();
  const auto logits = forward(p, tokens).logits;
  const auto expect = g["logits"].get<std::vector<std::vector<double>>>();
  ASSERT_EQ(logits.rows(), expect.size());
  for (std::size_t t = 0; t < expect.size(); ++t)
    for (std::size_t v = 0; v < expect[t].size(); ++v) EXPECT_NEAR(logits(t, v), expect[t][v], 1e-12);
}

TEST(Forward, MatchesScalarLoopOracleOnRandomParams) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = recipe_params(ModelConfig{12, 12, 3, 3, 20, 10, 0}, seed);
    const auto toks = random_tokens(10, 12, seed);
    const auto got = forward(p, toks).logits;
    const auto expect = oracle::forward(oracle::copy_params(p), toks);
    for (std::size_t t = 0; t < 10; ++t)
      for (std::size_t v = 0; v < 12; ++v) EXPECT_NEAR(got(t, v), expect[t][v], 1e-12);
  }
}

TEST(Loss, UniformLogits) {
  const MatrixD logits(3, 16, 0.25);
  EXPECT_NEAR(loss(logits, std::vector<int>{1, 5, 15}), std::log(16.0), 1e-12);
}

TEST(Loss, VanishesWithMargin) {
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 10.0, 20.0, 40.0}) {
    MatrixD logits(1, 4);
    logits(0, 2) = margin;
    const double l = loss(logits, std::vector<int>{2});
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(Loss, MatchesScalarOracle) {
  const MatrixD logits = oracle::random_matrix(7, 16, 9, -4.0, 4.0);
  const auto targets = random_tokens(7, 16, 9);
  const double expect = oracle::cross_entropy(oracle::to_grid(logits), targets);
  EXPECT_NEAR(loss(logits, targets), expect, 1e-10 * expect);
}

TEST(Loss, IgnoresMaskedPositionsAndValidates) {
  const MatrixD logits = oracle::random_matrix(3, 4, 2);
  const std::vector<int> masked{kIgnoreTarget, 1, kIgnoreTarget};
  EXPECT_NEAR(loss(logits, masked),
              oracle::cross_entropy(oracle::to_grid(logits), masked), 1e-14);
  EXPECT_THROW(loss(logits, std::vector<int>{0, 4, 1}), InvalidInput);
  EXPECT_THROW(loss(logits, std::vector<int>{0, 1}), InvalidInput);
  EXPECT_THROW(loss(logits, std::vector<int>(3, kIgnoreTarget)), InvalidInput);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = verify::check_grad_fd(small_config(), seed);
    EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_violation;
    EXPECT_EQ(r.samples, 2u * (4 * 64 + 3 * 128));
  }
}

TEST(Backward, UnmonitoredParametersMatchFiniteDifferences) {
  verify::FdOptions o;
  o.include_unmonitored = true;
  const auto r = verify::check_grad_fd(small_config(), 8, o);
  EXPECT_TRUE(r.passed) << r.max_violation;
  EXPECT_TRUE(r.observations.contains("tok_embedding"));
  EXPECT_TRUE(r.observations.contains("head"));
}

TEST(Backward, ZeroSignalGivesZeroGradients) {
  const auto r = verify::check_zero_gradient(1);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.observations.at("loss"), 0.0);
}

TEST(Backward, UnusedVocabularyRowIsZero) { EXPECT_TRUE(verify::check_unused_row(2).passed); }

TEST(Backward, RejectsStaleCache) {
  auto p = init_params<double>(small_config());
  const auto toks = random_tokens(5, 16, 1);
  const auto fwd = forward(p, toks);
  p.base.at({0, Role::Q})(0, 0) += 1.0;
  EXPECT_THROW(backward(p, fwd.cache, toks), ContractError);
}

TEST(Backward, Deterministic) {
  const auto p = recipe_params(small_config(), 2);
  const auto toks = random_tokens(6, 16, 3);
  const auto a = backward(p, forward(p, toks).cache, toks);
  const auto b = backward(p, forward(p, toks).cache, toks);
  EXPECT_TRUE(a == b);
}

TEST(Backward, CausalityOfEmbeddingGradient) {
  // Loss scored only at position t must not depend on inputs at u > t.
  const auto p = recipe_params(small_config(), 4);
  const auto toks = std::vector<int>{1, 2, 3, 4, 5, 6};
  std::vector<int> targets(6, kIgnoreTarget);
  targets[2] = 7;
  const auto g = backward(p, forward(p, toks).cache, targets);
  for (std::size_t u = 3; u < 6; ++u) {
    for (double v : g.base.token_embedding.row(static_cast<std::size_t>(toks[u]))) EXPECT_EQ(v, 0.0);
    for (double v : g.base.position_embedding.row(u)) EXPECT_EQ(v, 0.0);
  }
  // Finite differences agree: perturbing a future position's embedding leaves the loss unchanged.
  auto q = p;
  q.base.position_embedding(4, 0) += 1e-3;
  EXPECT_EQ(sequence_loss(p, toks, targets), sequence_loss(q, toks, targets));
}

TEST(Checkpoint, BitExactRoundTrip) {
  auto p = init_params<float>(small_config(9));
  std::stringstream ss;
  write_checkpoint(ss, p);
  const auto q = read_checkpoint<float>(ss);
  EXPECT_TRUE(p == q);

  attach_adapters(p, 2, 0.5, {}, 3);
  p.adapters[1].b(0, 0) = 0.25f;
  std::stringstream s2;
  write_checkpoint(s2, p);
  const auto r = read_checkpoint<float>(s2);
  EXPECT_TRUE(p == r);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto p = init_params<double>(small_config());
  std::stringstream ss;
  write_checkpoint(ss, p);
  const std::string bytes = ss.str();
  std::stringstream wrong_precision(bytes);
  EXPECT_THROW(read_checkpoint<float>(wrong_precision), IoError);
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint<double>(truncated), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  EXPECT_THROW(read_checkpoint<double>(bad_magic), IoError);
}

TEST(Checkpoint, WritesLittleEndianHeader) {
  const auto p = init_params<float>(small_config());
  std::stringstream ss;
  write_checkpoint(ss, p);
  const std::string b = ss.str();
  EXPECT_EQ(b.substr(0, 8), "GRLBCKPT");
  EXPECT_EQ(static_cast<unsigned char>(b[8]), kCheckpointVersion);
  EXPECT_EQ(static_cast<unsigned char>(b[12]), 4);
}
