#pragma once

#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grades_lab/component.hpp"
#include "grades_lab/lora.hpp"
#include "grades_lab/matrix.hpp"

namespace grades_lab {

struct ModelConfig {
  std::size_t vocab_size = 16;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t max_seq_len = 16;
  std::uint64_t seed = 1;

  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  // Throws ConfigError on zero dims or d_model % n_heads != 0.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Target value for positions that do not contribute to the loss.
inline constexpr int kIgnoreTarget = -1;

inline constexpr double kRmsNormEps = 1e-6;

// Weights are stored d_out x d_in and applied to row-major activations as
// Y = X * W^T. Gains are 1 x d_model row vectors.
template <std::floating_point T>
struct LayerWeights {
  std::array<Matrix<T>, kRolesPerLayer> proj;  // indexed by Role
  Matrix<T> attn_norm;
  Matrix<T> mlp_norm;

  Matrix<T>& operator[](Role r) noexcept { return proj[static_cast<std::size_t>(r)]; }
  const Matrix<T>& operator[](Role r) const noexcept {
    return proj[static_cast<std::size_t>(r)];
  }

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

// Full weight set of the decoder. Positions use a learned absolute embedding
// added to the token embedding; the output head is a separate matrix (not tied
// to the token embedding) so unused vocabulary rows get exactly zero gradient.
//
// Unmonitored parameters: token/position embeddings, norm gains, head.
template <std::floating_point T>
struct Weights {
  Matrix<T> token_embedding;     // vocab x d_model
  Matrix<T> position_embedding;  // max_seq_len x d_model
  std::vector<LayerWeights<T>> layers;
  Matrix<T> final_norm;  // 1 x d_model
  Matrix<T> head;        // vocab x d_model

  Matrix<T>& at(ComponentId id);
  const Matrix<T>& at(ComponentId id) const;

  // Visits every parameter matrix in canonical checkpoint order. The component
  // argument is set for the seven monitored matrices of each layer.
  void for_each(const std::function<void(const std::string& name, std::optional<ComponentId>,
                                         Matrix<T>&)>& fn);
  void for_each(const std::function<void(const std::string& name, std::optional<ComponentId>,
                                         const Matrix<T>&)>& fn) const;

  friend bool operator==(const Weights&, const Weights&) = default;
};

// Gradients for every parameter, in the same layout. In LoRA mode only the
// adapter gradients are populated and `base` holds empty matrices.
template <std::floating_point T>
struct AdapterGradient {
  ComponentId component;
  Matrix<T> a;
  Matrix<T> b;
  friend bool operator==(const AdapterGradient&, const AdapterGradient&) = default;
};

template <std::floating_point T>
struct ModelParams {
  ModelConfig config;
  Weights<T> base;
  // Empty outside LoRA mode; otherwise sorted by component.
  std::vector<LoraAdapter<T>> adapters;

  bool lora_mode() const noexcept { return !adapters.empty(); }
  const LoraAdapter<T>* adapter_for(ComponentId id) const noexcept;
  LoraAdapter<T>* adapter_for(ComponentId id) noexcept;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.config == b.config && a.base == b.base && a.adapters.size() == b.adapters.size()))
      return false;
    for (std::size_t i = 0; i < a.adapters.size(); ++i) {
      const auto &x = a.adapters[i], &y = b.adapters[i];
      if (!(x.component == y.component && x.a == y.a && x.b == y.b && x.scale == y.scale))
        return false;
    }
    return true;
  }
};

template <std::floating_point T>
struct GradientBundle {
  Weights<T> base;
  std::vector<AdapterGradient<T>> adapters;

  bool has_base() const noexcept { return !base.token_embedding.empty(); }
  const AdapterGradient<T>* adapter_for(ComponentId id) const noexcept;

  // Gradient parts for one monitored component: {dW} in full mode, {dA, dB}
  // in LoRA mode.
  std::vector<const Matrix<T>*> parts(ComponentId id) const;

  friend bool operator==(const GradientBundle&, const GradientBundle&) = default;
};

// Intermediates recorded by forward for backward.
template <std::floating_point T>
struct LayerCache {
  Matrix<T> x_in;
  std::vector<double> attn_rms;
  Matrix<T> attn_normed;  // x / rms, before the gain
  Matrix<T> h_attn;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;  // one seq x seq matrix per head
  Matrix<T> attn_out;            // concatenated heads, before W_o
  Matrix<T> x_mid;
  std::vector<double> mlp_rms;
  Matrix<T> mlp_normed;
  Matrix<T> h_mlp;
  Matrix<T> gate_pre, up, act;  // act = silu(gate_pre) * up
  // X * A^T per adapted role (LoRA mode only).
  std::array<Matrix<T>, kRolesPerLayer> lora_xa;
};

template <std::floating_point T>
struct ActivationCache {
  std::vector<int> tokens;
  std::uint64_t params_fingerprint = 0;
  std::vector<LayerCache<T>> layers;
  Matrix<T> x_final;
  std::vector<double> final_rms;
  Matrix<T> final_normed;
  Matrix<T> h_final;
  Matrix<T> logits;
};

template <std::floating_point T>
struct ForwardResult {
  Matrix<T> logits;  // seq_len x vocab
  ActivationCache<T> cache;
};

// Weights ~ normal(0, 0.02) truncated at +-2 sigma, gains = 1; bit-identical for equal configs.
template <std::floating_point T>
ModelParams<T> init_params(const ModelConfig& cfg);

// Attaches zero-start adapters of the given rank to every role in `roles`
// (all seven by default) on every layer.
template <std::floating_point T>
void attach_adapters(ModelParams<T>& params, std::size_t rank, double scale,
                     std::span<const Role> roles, std::uint64_t seed);

// Order-sensitive 64-bit hash over every parameter's bytes.
template <std::floating_point T>
std::uint64_t fingerprint(const ModelParams<T>& params);

template <std::floating_point T>
std::uint64_t hash_matrix(const Matrix<T>& m);

// Causal pre-norm decoder forward pass. Throws InvalidInput on out-of-range
// tokens, empty input, or input longer than max_seq_len.
template <std::floating_point T>
ForwardResult<T> forward(const ModelParams<T>& params, std::span<const int> tokens);

// Mean token cross-entropy over positions whose target is not kIgnoreTarget,
// using max-subtracted log-softmax in double.
template <std::floating_point T>
double loss(const Matrix<T>& logits, std::span<const int> targets);

// Exact gradients of loss(forward(params, tokens).logits, targets). Throws
// ContractError if `cache` was produced from different params.
template <std::floating_point T>
GradientBundle<T> backward(const ModelParams<T>& params, const ActivationCache<T>& cache,
                           std::span<const int> targets);

// forward + loss without keeping the cache.
template <std::floating_point T>
double sequence_loss(const ModelParams<T>& params, std::span<const int> tokens,
                     std::span<const int> targets);

// Zeroed gradient bundle shaped like params (base or adapters, matching mode).
template <std::floating_point T>
GradientBundle<T> zero_gradients(const ModelParams<T>& params);

// acc += scale * g
template <std::floating_point T>
void accumulate(GradientBundle<T>& acc, const GradientBundle<T>& g, T scale);

}  // namespace grades_lab
