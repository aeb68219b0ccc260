#include "grades_lab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "grades_lab/rng.hpp"

namespace grades_lab {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 ||
      max_seq_len == 0) {
    throw ConfigError("model config: all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model (" + std::to_string(d_model) +
                      ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
}

// ---------------------------------------------------------------------------
// Parameter containers

template <std::floating_point T>
Matrix<T>& Weights<T>::at(ComponentId id) {
  if (id.layer < 0 || static_cast<std::size_t>(id.layer) >= layers.size()) {
    throw ContractError("unknown component " + component_name(id));
  }
  return layers[static_cast<std::size_t>(id.layer)][id.role];
}

template <std::floating_point T>
const Matrix<T>& Weights<T>::at(ComponentId id) const {
  return const_cast<Weights&>(*this).at(id);
}

namespace {

template <typename W, typename Fn>
void visit_weights(W& w, Fn&& fn) {
  fn(std::string("tok_embedding"), std::optional<ComponentId>{}, w.token_embedding);
  fn(std::string("pos_embedding"), std::optional<ComponentId>{}, w.position_embedding);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    for (Role r : kAllRoles) {
      const ComponentId id{static_cast<int>(l), r};
      fn(component_name(id), std::optional<ComponentId>{id}, layer[r]);
    }
    const std::string prefix = "layer." + std::to_string(l) + ".";
    fn(prefix + "attn_norm", std::optional<ComponentId>{}, layer.attn_norm);
    fn(prefix + "mlp_norm", std::optional<ComponentId>{}, layer.mlp_norm);
  }
  fn(std::string("final_norm"), std::optional<ComponentId>{}, w.final_norm);
  fn(std::string("head"), std::optional<ComponentId>{}, w.head);
}

}  // namespace

template <std::floating_point T>
void Weights<T>::for_each(
    const std::function<void(const std::string&, std::optional<ComponentId>, Matrix<T>&)>& fn) {
  visit_weights(*this, fn);
}

template <std::floating_point T>
void Weights<T>::for_each(
    const std::function<void(const std::string&, std::optional<ComponentId>, const Matrix<T>&)>&
        fn) const {
  visit_weights(*this, fn);
}

template <std::floating_point T>
const LoraAdapter<T>* ModelParams<T>::adapter_for(ComponentId id) const noexcept {
  for (const auto& ad : adapters)
    if (ad.component == id) return &ad;
  return nullptr;
}

template <std::floating_point T>
LoraAdapter<T>* ModelParams<T>::adapter_for(ComponentId id) noexcept {
  for (auto& ad : adapters)
    if (ad.component == id) return &ad;
  return nullptr;
}

template <std::floating_point T>
const AdapterGradient<T>* GradientBundle<T>::adapter_for(ComponentId id) const noexcept {
  for (const auto& g : adapters)
    if (g.component == id) return &g;
  return nullptr;
}

template <std::floating_point T>
std::vector<const Matrix<T>*> GradientBundle<T>::parts(ComponentId id) const {
  if (!adapters.empty()) {
    const auto* g = adapter_for(id);
    if (g == nullptr) throw ContractError("no adapter gradient for " + component_name(id));
    return {&g->a, &g->b};
  }
  return {&base.at(id)};
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

constexpr double kInitStd = 0.02;

template <std::floating_point T>
Matrix<T> random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix<T> m(rows, cols);
  for (T& v : m.values()) v = static_cast<T>(rng.truncated_normal(kInitStd, 2.0));
  return m;
}

template <std::floating_point T>
Shape projection_shape(const ModelConfig& cfg, Role r) {
  switch (r) {
    case Role::Gate:
    case Role::Up:
      return {cfg.d_ff, cfg.d_model};
    case Role::Down:
      return {cfg.d_model, cfg.d_ff};
    default:
      return {cfg.d_model, cfg.d_model};
  }
}

}  // namespace

template <std::floating_point T>
ModelParams<T> init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelParams<T> p;
  p.config = cfg;
  auto& w = p.base;
  w.token_embedding = random_matrix<T>(rng, cfg.vocab_size, cfg.d_model);
  w.position_embedding = random_matrix<T>(rng, cfg.max_seq_len, cfg.d_model);
  w.layers.resize(cfg.n_layers);
  for (auto& layer : w.layers) {
    for (Role r : kAllRoles) {
      const Shape s = projection_shape<T>(cfg, r);
      layer[r] = random_matrix<T>(rng, s.rows, s.cols);
    }
    layer.attn_norm = Matrix<T>(1, cfg.d_model, T{1});
    layer.mlp_norm = Matrix<T>(1, cfg.d_model, T{1});
  }
  w.final_norm = Matrix<T>(1, cfg.d_model, T{1});
  w.head = random_matrix<T>(rng, cfg.vocab_size, cfg.d_model);
  return p;
}

template <std::floating_point T>
void attach_adapters(ModelParams<T>& params, std::size_t rank, double scale,
                     std::span<const Role> roles, std::uint64_t seed) {
  std::vector<Role> selected(roles.begin(), roles.end());
  if (selected.empty()) selected.assign(kAllRoles.begin(), kAllRoles.end());
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());

  params.adapters.clear();
  Rng seeder(seed);
  for (std::size_t l = 0; l < params.base.layers.size(); ++l) {
    for (Role r : selected) {
      const ComponentId id{static_cast<int>(l), r};
      const auto& w = params.base.at(id);
      params.adapters.push_back(
          make_adapter<T>(id, w.rows(), w.cols(), rank, scale, seeder.next_u64()));
    }
  }
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

template <std::floating_point T>
std::uint64_t mix_matrix(std::uint64_t h, const Matrix<T>& m) {
  h = (h ^ m.rows()) * kFnvPrime;
  h = (h ^ m.cols()) * kFnvPrime;
  for (T v : m.values()) {
    std::uint64_t bits;
    if constexpr (sizeof(T) == 8) {
      bits = std::bit_cast<std::uint64_t>(v);
    } else {
      bits = std::bit_cast<std::uint32_t>(v);
    }
    h = (h ^ bits) * kFnvPrime;
  }
  return h;
}

}  // namespace

template <std::floating_point T>
std::uint64_t hash_matrix(const Matrix<T>& m) {
  return mix_matrix(kFnvOffset, m);
}

template <std::floating_point T>
std::uint64_t fingerprint(const ModelParams<T>& params) {
  std::uint64_t h = kFnvOffset;
  params.base.for_each(
      [&](const std::string&, std::optional<ComponentId>, const Matrix<T>& m) { h = mix_matrix(h, m); });
  for (const auto& ad : params.adapters) {
    h = (h ^ flat_index(ad.component)) * kFnvPrime;
    h = mix_matrix(h, ad.a);
    h = mix_matrix(h, ad.b);
    h = (h ^ std::bit_cast<std::uint64_t>(ad.scale)) * kFnvPrime;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

template <std::floating_point T>
void rms_norm_forward(const Matrix<T>& x, const Matrix<T>& gain, std::vector<double>& rms,
                      Matrix<T>& normed, Matrix<T>& out) {
  const std::size_t n = x.rows(), d = x.cols();
  rms.assign(n, 0.0);
  normed = Matrix<T>(n, d);
  out = Matrix<T>(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(x(t, j)) * x(t, j);
    const double r = std::sqrt(ss / static_cast<double>(d) + kRmsNormEps);
    rms[t] = r;
    for (std::size_t j = 0; j < d; ++j) {
      const T nv = static_cast<T>(static_cast<double>(x(t, j)) / r);
      normed(t, j) = nv;
      out(t, j) = nv * gain(0, j);
    }
  }
}

// Returns dx; accumulates into dgain when non-null.
template <std::floating_point T>
Matrix<T> rms_norm_backward(const Matrix<T>& dout, const Matrix<T>& normed,
                            const std::vector<double>& rms, const Matrix<T>& gain,
                            Matrix<T>* dgain) {
  const std::size_t n = dout.rows(), d = dout.cols();
  Matrix<T> dx(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dn = static_cast<double>(dout(t, j)) * gain(0, j);
      dot += dn * normed(t, j);
      if (dgain != nullptr) (*dgain)(0, j) += dout(t, j) * normed(t, j);
    }
    const double mean_dot = dot / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double dn = static_cast<double>(dout(t, j)) * gain(0, j);
      dx(t, j) = static_cast<T>((dn - normed(t, j) * mean_dot) / rms[t]);
    }
  }
  return dx;
}

// Y = X W^T (+ scale * (X A^T) B^T)
template <std::floating_point T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w, const LoraAdapter<T>* ad,
                         Matrix<T>* xa_out) {
  Matrix<T> y = matmul_nt(x, w);
  if (ad != nullptr) {
    Matrix<T> xa = matmul_nt(x, ad->a);
    axpy(static_cast<T>(ad->scale), matmul_nt(xa, ad->b), y);
    *xa_out = std::move(xa);
  }
  return y;
}

// Returns dX. Writes dW when dw is non-null, adapter gradients when ad is non-null.
template <std::floating_point T>
Matrix<T> linear_backward(const Matrix<T>& dy, const Matrix<T>& x, const Matrix<T>& w,
                          const LoraAdapter<T>* ad, const Matrix<T>* xa, Matrix<T>* dw,
                          AdapterGradient<T>* dad) {
  Matrix<T> dx = matmul(dy, w);
  if (dw != nullptr) *dw = matmul_tn(dy, x);
  if (ad != nullptr) {
    const T s = static_cast<T>(ad->scale);
    const Matrix<T> dyb = matmul(dy, ad->b);
    dad->b = scaled(matmul_tn(dy, *xa), s);
    dad->a = scaled(matmul_tn(dyb, x), s);
    axpy(s, matmul(dyb, ad->a), dx);
  }
  return dx;
}

template <std::floating_point T>
Matrix<T> head_slice(const Matrix<T>& m, std::size_t head, std::size_t dh) {
  Matrix<T> out(m.rows(), dh);
  for (std::size_t t = 0; t < m.rows(); ++t)
    for (std::size_t j = 0; j < dh; ++j) out(t, j) = m(t, head * dh + j);
  return out;
}

template <std::floating_point T>
void scatter_head(const Matrix<T>& part, std::size_t head, std::size_t dh, Matrix<T>& m) {
  for (std::size_t t = 0; t < part.rows(); ++t)
    for (std::size_t j = 0; j < dh; ++j) m(t, head * dh + j) = part(t, j);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

template <std::floating_point T>
void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  if (tokens.empty()) throw InvalidInput("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq_len) {
    throw InvalidInput("forward: sequence length " + std::to_string(tokens.size()) +
                       " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (int tok : tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size) {
      throw InvalidInput("forward: token " + std::to_string(tok) + " outside vocab of size " +
                         std::to_string(cfg.vocab_size));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward

template <std::floating_point T>
ForwardResult<T> forward(const ModelParams<T>& params, std::span<const int> tokens) {
  const ModelConfig& cfg = params.config;
  check_tokens<T>(cfg, tokens);
  const auto& w = params.base;
  const std::size_t n = tokens.size(), d = cfg.d_model, nh = cfg.n_heads, dh = cfg.head_dim();
  const T score_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  ActivationCache<T> cache;
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.params_fingerprint = fingerprint(params);
  cache.layers.resize(cfg.n_layers);

  Matrix<T> x(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j)
      x(t, j) = w.token_embedding(static_cast<std::size_t>(tokens[t]), j) +
                w.position_embedding(t, j);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = w.layers[l];
    auto& lc = cache.layers[l];
    const auto adapter = [&](Role r) { return params.adapter_for({static_cast<int>(l), r}); };
    const auto xa_slot = [&](Role r) { return &lc.lora_xa[static_cast<std::size_t>(r)]; };

    lc.x_in = x;
    rms_norm_forward(x, lw.attn_norm, lc.attn_rms, lc.attn_normed, lc.h_attn);
    lc.q = linear_forward(lc.h_attn, lw[Role::Q], adapter(Role::Q), xa_slot(Role::Q));
    lc.k = linear_forward(lc.h_attn, lw[Role::K], adapter(Role::K), xa_slot(Role::K));
    lc.v = linear_forward(lc.h_attn, lw[Role::V], adapter(Role::V), xa_slot(Role::V));

    lc.attn_out = Matrix<T>(n, d);
    lc.probs.assign(nh, Matrix<T>());
    for (std::size_t hd = 0; hd < nh; ++hd) {
      const Matrix<T> qh = head_slice(lc.q, hd, dh);
      const Matrix<T> kh = head_slice(lc.k, hd, dh);
      const Matrix<T> vh = head_slice(lc.v, hd, dh);
      Matrix<T> probs = matmul_nt(qh, kh);
      for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          probs(i, j) *= score_scale;
          mx = std::max(mx, static_cast<double>(probs(i, j)));
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double e = std::exp(static_cast<double>(probs(i, j)) - mx);
          probs(i, j) = static_cast<T>(e);
          z += e;
        }
        for (std::size_t j = 0; j <= i; ++j) probs(i, j) = static_cast<T>(probs(i, j) / z);
        for (std::size_t j = i + 1; j < n; ++j) probs(i, j) = T{0};
      }
      scatter_head(matmul(probs, vh), hd, dh, lc.attn_out);
      lc.probs[hd] = std::move(probs);
    }
    const Matrix<T> attn = linear_forward(lc.attn_out, lw[Role::O], adapter(Role::O), xa_slot(Role::O));
    x = add(x, attn);
    lc.x_mid = x;

    rms_norm_forward(x, lw.mlp_norm, lc.mlp_rms, lc.mlp_normed, lc.h_mlp);
    lc.gate_pre = linear_forward(lc.h_mlp, lw[Role::Gate], adapter(Role::Gate), xa_slot(Role::Gate));
    lc.up = linear_forward(lc.h_mlp, lw[Role::Up], adapter(Role::Up), xa_slot(Role::Up));
    lc.act = Matrix<T>(n, cfg.d_ff);
    for (std::size_t i = 0; i < lc.act.size(); ++i) {
      const double g = lc.gate_pre.values()[i];
      lc.act.values()[i] = static_cast<T>(g * sigmoid(g) * lc.up.values()[i]);
    }
    const Matrix<T> mlp = linear_forward(lc.act, lw[Role::Down], adapter(Role::Down), xa_slot(Role::Down));
    x = add(x, mlp);
  }

  cache.x_final = x;
  rms_norm_forward(x, w.final_norm, cache.final_rms, cache.final_normed, cache.h_final);
  cache.logits = matmul_nt(cache.h_final, w.head);
  if (!all_finite(cache.logits)) throw NumericalError("forward: non-finite logits");
  Matrix<T> logits = cache.logits;
  return {std::move(logits), std::move(cache)};
}

// ---------------------------------------------------------------------------
// Loss

namespace {

template <std::floating_point T>
std::size_t check_targets(const Matrix<T>& logits, std::span<const int> targets) {
  if (targets.size() != logits.rows()) {
    throw InvalidInput("loss: " + std::to_string(targets.size()) + " targets for " +
                       std::to_string(logits.rows()) + " positions");
  }
  std::size_t counted = 0;
  for (int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) {
      throw InvalidInput("loss: target " + std::to_string(t) + " outside vocab of size " +
                         std::to_string(logits.cols()));
    }
    ++counted;
  }
  if (counted == 0) throw InvalidInput("loss: no scored positions");
  return counted;
}

}  // namespace

template <std::floating_point T>
double loss(const Matrix<T>& logits, std::span<const int> targets) {
  const std::size_t counted = check_targets(logits, targets);
  double total = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (targets[t] == kIgnoreTarget) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits.row(t)) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (T v : logits.row(t)) z += std::exp(static_cast<double>(v) - mx);
    total += -(static_cast<double>(logits(t, static_cast<std::size_t>(targets[t]))) - mx -
               std::log(z));
  }
  return total / static_cast<double>(counted);
}

template <std::floating_point T>
double sequence_loss(const ModelParams<T>& params, std::span<const int> tokens,
                     std::span<const int> targets) {
  return loss(forward(params, tokens).logits, targets);
}

// ---------------------------------------------------------------------------
// Backward

template <std::floating_point T>
GradientBundle<T> zero_gradients(const ModelParams<T>& params) {
  GradientBundle<T> g;
  if (params.lora_mode()) {
    for (const auto& ad : params.adapters)
      g.adapters.push_back({ad.component, zeros_like(ad.a), zeros_like(ad.b)});
    return g;
  }
  g.base = params.base;
  g.base.for_each([](const std::string&, std::optional<ComponentId>, Matrix<T>& m) { m.fill(T{0}); });
  return g;
}

template <std::floating_point T>
void accumulate(GradientBundle<T>& acc, const GradientBundle<T>& g, T scale) {
  if (acc.has_base() != g.has_base() || acc.adapters.size() != g.adapters.size()) {
    throw ShapeError("accumulate: gradient bundles of different modes");
  }
  if (acc.has_base()) {
    std::vector<const Matrix<T>*> src;
    g.base.for_each([&](const std::string&, std::optional<ComponentId>, const Matrix<T>& m) {
      src.push_back(&m);
    });
    std::size_t i = 0;
    acc.base.for_each(
        [&](const std::string&, std::optional<ComponentId>, Matrix<T>& m) { axpy(scale, *src[i++], m); });
  }
  for (std::size_t i = 0; i < acc.adapters.size(); ++i) {
    axpy(scale, g.adapters[i].a, acc.adapters[i].a);
    axpy(scale, g.adapters[i].b, acc.adapters[i].b);
  }
}

template <std::floating_point T>
GradientBundle<T> backward(const ModelParams<T>& params, const ActivationCache<T>& cache,
                           std::span<const int> targets) {
  if (cache.params_fingerprint != fingerprint(params) ||
      cache.layers.size() != params.config.n_layers) {
    throw ContractError("backward: activation cache was produced from different parameters");
  }
  const ModelConfig& cfg = params.config;
  const auto& w = params.base;
  const std::size_t n = cache.tokens.size(), d = cfg.d_model, nh = cfg.n_heads,
                    dh = cfg.head_dim(), vocab = cfg.vocab_size;
  const bool full = !params.lora_mode();
  const T score_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  const std::size_t counted = check_targets(cache.logits, targets);
  GradientBundle<T> grads = zero_gradients(params);
  const auto adapter_grad = [&](ComponentId id) -> AdapterGradient<T>* {
    for (auto& g : grads.adapters)
      if (g.component == id) return &g;
    return nullptr;
  };

  // d loss / d logits = (softmax - onehot) / counted on scored rows.
  Matrix<T> dlogits(n, vocab);
  for (std::size_t t = 0; t < n; ++t) {
    if (targets[t] == kIgnoreTarget) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : cache.logits.row(t)) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (T v : cache.logits.row(t)) z += std::exp(static_cast<double>(v) - mx);
    for (std::size_t c = 0; c < vocab; ++c) {
      double p = std::exp(static_cast<double>(cache.logits(t, c)) - mx) / z;
      if (static_cast<int>(c) == targets[t]) p -= 1.0;
      dlogits(t, c) = static_cast<T>(p / static_cast<double>(counted));
    }
  }

  Matrix<T> dh_final = matmul(dlogits, w.head);
  if (full) grads.base.head = matmul_tn(dlogits, cache.h_final);
  Matrix<T> dx = rms_norm_backward(dh_final, cache.final_normed, cache.final_rms, w.final_norm,
                                   full ? &grads.base.final_norm : nullptr);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& lw = w.layers[li];
    const auto& lc = cache.layers[li];
    const int layer = static_cast<int>(li);
    const auto ad = [&](Role r) { return params.adapter_for({layer, r}); };
    const auto xa = [&](Role r) { return &lc.lora_xa[static_cast<std::size_t>(r)]; };
    const auto dw = [&](Role r) -> Matrix<T>* {
      return full ? &grads.base.layers[li][r] : nullptr;
    };
    const auto dad = [&](Role r) { return adapter_grad({layer, r}); };

    // MLP block: x_out = x_mid + down(silu(gate(h)) * up(h))
    const Matrix<T> dact =
        linear_backward(dx, lc.act, lw[Role::Down], ad(Role::Down), xa(Role::Down), dw(Role::Down),
                        dad(Role::Down));
    Matrix<T> dgate(n, cfg.d_ff), dup(n, cfg.d_ff);
    for (std::size_t i = 0; i < dact.size(); ++i) {
      const double g = lc.gate_pre.values()[i];
      const double s = sigmoid(g);
      const double silu = g * s;
      const double dsilu = s * (1.0 + g * (1.0 - s));
      const double da = dact.values()[i];
      dgate.values()[i] = static_cast<T>(da * lc.up.values()[i] * dsilu);
      dup.values()[i] = static_cast<T>(da * silu);
    }
    Matrix<T> dh_mlp = linear_backward(dgate, lc.h_mlp, lw[Role::Gate], ad(Role::Gate),
                                       xa(Role::Gate), dw(Role::Gate), dad(Role::Gate));
    axpy(T{1},
         linear_backward(dup, lc.h_mlp, lw[Role::Up], ad(Role::Up), xa(Role::Up), dw(Role::Up),
                         dad(Role::Up)),
         dh_mlp);
    Matrix<T> dx_mid = rms_norm_backward(dh_mlp, lc.mlp_normed, lc.mlp_rms, lw.mlp_norm,
                                         full ? &grads.base.layers[li].mlp_norm : nullptr);
    axpy(T{1}, dx, dx_mid);

    // Attention block: x_mid = x_in + o(attention(q, k, v))
    const Matrix<T> dattn_out = linear_backward(dx_mid, lc.attn_out, lw[Role::O], ad(Role::O),
                                                xa(Role::O), dw(Role::O), dad(Role::O));
    Matrix<T> dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t hd = 0; hd < nh; ++hd) {
      const Matrix<T>& probs = lc.probs[hd];
      const Matrix<T> qh = head_slice(lc.q, hd, dh);
      const Matrix<T> kh = head_slice(lc.k, hd, dh);
      const Matrix<T> vh = head_slice(lc.v, hd, dh);
      const Matrix<T> doh = head_slice(dattn_out, hd, dh);
      Matrix<T> dscores = matmul_nt(doh, vh);  // dP
      scatter_head(matmul_tn(probs, doh), hd, dh, dv);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j)
          dot += static_cast<double>(probs(i, j)) * dscores(i, j);
        for (std::size_t j = 0; j < n; ++j) {
          dscores(i, j) = j <= i ? static_cast<T>(probs(i, j) * (dscores(i, j) - dot) * score_scale)
                                 : T{0};
        }
      }
      scatter_head(matmul(dscores, kh), hd, dh, dq);
      scatter_head(matmul_tn(dscores, qh), hd, dh, dk);
    }
    Matrix<T> dh_attn =
        linear_backward(dq, lc.h_attn, lw[Role::Q], ad(Role::Q), xa(Role::Q), dw(Role::Q), dad(Role::Q));
    axpy(T{1},
         linear_backward(dk, lc.h_attn, lw[Role::K], ad(Role::K), xa(Role::K), dw(Role::K), dad(Role::K)),
         dh_attn);
    axpy(T{1},
         linear_backward(dv, lc.h_attn, lw[Role::V], ad(Role::V), xa(Role::V), dw(Role::V), dad(Role::V)),
         dh_attn);
    Matrix<T> dx_in = rms_norm_backward(dh_attn, lc.attn_normed, lc.attn_rms, lw.attn_norm,
                                        full ? &grads.base.layers[li].attn_norm : nullptr);
    axpy(T{1}, dx_mid, dx_in);
    dx = std::move(dx_in);
  }

  if (full) {
    for (std::size_t t = 0; t < n; ++t) {
      const auto tok = static_cast<std::size_t>(cache.tokens[t]);
      for (std::size_t j = 0; j < d; ++j) {
        grads.base.token_embedding(tok, j) += dx(t, j);
        grads.base.position_embedding(t, j) += dx(t, j);
      }
    }
  }
  return grads;
}

#define GRADES_LAB_INSTANTIATE(T)                                                                 \
  template struct Weights<T>;                                                                     \
  template struct ModelParams<T>;                                                                 \
  template struct GradientBundle<T>;                                                              \
  template ModelParams<T> init_params<T>(const ModelConfig&);                                     \
  template void attach_adapters<T>(ModelParams<T>&, std::size_t, double, std::span<const Role>,   \
                                   std::uint64_t);                                                \
  template std::uint64_t fingerprint<T>(const ModelParams<T>&);                                   \
  template std::uint64_t hash_matrix<T>(const Matrix<T>&);                                        \
  template ForwardResult<T> forward<T>(const ModelParams<T>&, std::span<const int>);              \
  template double loss<T>(const Matrix<T>&, std::span<const int>);                                \
  template GradientBundle<T> backward<T>(const ModelParams<T>&, const ActivationCache<T>&,        \
                                         std::span<const int>);                                   \
  template double sequence_loss<T>(const ModelParams<T>&, std::span<const int>,                   \
                                   std::span<const int>);                                         \
  template GradientBundle<T> zero_gradients<T>(const ModelParams<T>&);                            \
  template void accumulate<T>(GradientBundle<T>&, const GradientBundle<T>&, T);

GRADES_LAB_INSTANTIATE(float)
GRADES_LAB_INSTANTIATE(double)
#undef GRADES_LAB_INSTANTIATE

}  // namespace grades_lab
