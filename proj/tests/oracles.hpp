#pragma once

// Reference implementations for the tests. None of these call into the
// library's numeric code: plain nested loops over std::vector, closed forms,
// and textbook recurrences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "grades_lab/matrix.hpp"
#include "grades_lab/model.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

template <typename T>
Grid to_grid(const grades_lab::Matrix<T>& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = static_cast<double>(m(i, j));
  return g;
}

inline grades_lab::MatrixD random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  grades_lab::MatrixD m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = d(eng);
  return m;
}

inline double l1(const Grid& g) {
  double s = 0.0;
  for (const auto& row : g)
    for (double v : row) s += std::fabs(v);
  return s;
}

inline double max_row_sum(const Grid& g) {
  double best = 0.0;
  for (const auto& row : g) {
    double s = 0.0;
    for (double v : row) s += std::fabs(v);
    best = std::max(best, s);
  }
  return best;
}

inline double max_col_sum(const Grid& g) {
  double best = 0.0;
  for (std::size_t j = 0; j < g[0].size(); ++j) {
    double s = 0.0;
    for (const auto& row : g) s += std::fabs(row[j]);
    best = std::max(best, s);
  }
  return best;
}

// Gram matrix M^T M.
inline Grid gram(const Grid& g) {
  const std::size_t n = g[0].size();
  Grid out(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (const auto& row : g) out[a][b] += row[a] * row[b];
  return out;
}

// det(lambda*I - S) by Gaussian elimination with partial pivoting.
inline long double char_poly(const Grid& s, long double lambda) {
  const std::size_t n = s.size();
  std::vector<std::vector<long double>> a(n, std::vector<long double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = (i == j ? lambda : 0.0L) - s[i][j];
  long double det = 1.0L;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
    if (a[p][c] == 0.0L) return 0.0L;
    if (p != c) {
      std::swap(a[p], a[c]);
      det = -det;
    }
    det *= a[c][c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const long double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}

// Largest eigenvalue of a symmetric PSD matrix: scan down from the trace
// (an upper bound) for the first sign change of the characteristic
// polynomial, then bisect.
inline double largest_eigenvalue(const Grid& s) {
  long double trace = 0.0L;
  for (std::size_t i = 0; i < s.size(); ++i) trace += s[i][i];
  if (trace == 0.0L) return 0.0;
  const long double hi0 = trace * 1.0001L + 1e-12L;
  const int scan = 20000;
  const long double step = hi0 / scan;
  const bool sign_hi = char_poly(s, hi0) > 0;
  long double hi = hi0, lo = hi0;
  for (int i = 1; i <= scan; ++i) {
    lo = hi0 - step * i;
    if ((char_poly(s, lo) > 0) != sign_hi) break;
    hi = lo;
  }
  for (int it = 0; it < 200; ++it) {
    const long double mid = 0.5L * (lo + hi);
    if ((char_poly(s, mid) > 0) == sign_hi)
      hi = mid;
    else
      lo = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

inline double spectral(const Grid& g) { return std::sqrt(largest_eigenvalue(gram(g))); }

// ---------------------------------------------------------------------------
// Decoder forward with explicit loops over a parameter bundle copied into grids.

struct Params {
  std::size_t V, D, H, F;
  Grid tok, pos, final_norm, head;
  struct Layer {
    Grid q, k, v, o, gate, up, down, attn_norm, mlp_norm;
  };
  std::vector<Layer> layers;
};

template <typename T>
Params copy_params(const grades_lab::ModelParams<T>& p) {
  using grades_lab::Role;
  Params o;
  o.V = p.config.vocab_size;
  o.D = p.config.d_model;
  o.H = p.config.n_heads;
  o.F = p.config.d_ff;
  o.tok = to_grid(p.base.token_embedding);
  o.pos = to_grid(p.base.position_embedding);
  o.final_norm = to_grid(p.base.final_norm);
  o.head = to_grid(p.base.head);
  for (std::size_t l = 0; l < p.base.layers.size(); ++l) {
    const auto& lw = p.base.layers[l];
    auto eff = [&](Role r) {
      Grid w = to_grid(lw[r]);
      if (const auto* ad = p.adapter_for({static_cast<int>(l), r})) {
        const Grid a = to_grid(ad->a), b = to_grid(ad->b);
        for (std::size_t i = 0; i < w.size(); ++i)
          for (std::size_t j = 0; j < w[0].size(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) s += b[i][k] * a[k][j];
            w[i][j] += ad->scale * s;
          }
      }
      return w;
    };
    o.layers.push_back({eff(Role::Q), eff(Role::K), eff(Role::V), eff(Role::O), eff(Role::Gate), eff(Role::Up),
                        eff(Role::Down), to_grid(lw.attn_norm), to_grid(lw.mlp_norm)});
  }
  return o;
}

inline Grid linear(const Grid& x, const Grid& w) {
  Grid y(x.size(), std::vector<double>(w.size(), 0.0));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t o = 0; o < w.size(); ++o)
      for (std::size_t i = 0; i < x[t].size(); ++i) y[t][o] += x[t][i] * w[o][i];
  return y;
}

inline Grid rms(const Grid& x, const Grid& g) {
  Grid out = x;
  for (std::size_t t = 0; t < x.size(); ++t) {
    double ss = 0.0;
    for (double v : x[t]) ss += v * v;
    const double r = std::sqrt(ss / static_cast<double>(x[t].size()) + 1e-6);
    for (std::size_t j = 0; j < x[t].size(); ++j) out[t][j] = x[t][j] / r * g[0][j];
  }
  return out;
}

inline Grid forward(const Params& p, const std::vector<int>& toks) {
  const std::size_t n = toks.size(), dh = p.D / p.H;
  Grid x(n, std::vector<double>(p.D));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < p.D; ++j) x[t][j] = p.tok[toks[t]][j] + p.pos[t][j];
  for (const auto& L : p.layers) {
    Grid h = rms(x, L.attn_norm);
    const Grid q = linear(h, L.q), k = linear(h, L.k), v = linear(h, L.v);
    Grid att(n, std::vector<double>(p.D, 0.0));
    for (std::size_t hd = 0; hd < p.H; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sc(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < dh; ++a) s += q[i][off + a] * k[j][off + a];
          sc[j] = s / std::sqrt(static_cast<double>(dh));
        }
        const double mx = *std::max_element(sc.begin(), sc.end());
        double z = 0.0;
        for (double& s : sc) z += (s = std::exp(s - mx));
        for (std::size_t a = 0; a < dh; ++a) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= i; ++j) acc += sc[j] / z * v[j][off + a];
          att[i][off + a] = acc;
        }
      }
    }
    const Grid o = linear(att, L.o);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < p.D; ++j) x[t][j] += o[t][j];
    h = rms(x, L.mlp_norm);
    const Grid g = linear(h, L.gate), u = linear(h, L.up);
    Grid act(n, std::vector<double>(p.F));
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t f = 0; f < p.F; ++f) act[t][f] = g[t][f] / (1.0 + std::exp(-g[t][f])) * u[t][f];
    const Grid dn = linear(act, L.down);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < p.D; ++j) x[t][j] += dn[t][j];
  }
  return linear(rms(x, p.final_norm), p.head);
}

// Mean cross-entropy over positions whose target is >= 0.
inline double cross_entropy(const Grid& logits, const std::vector<int>& targets) {
  double total = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (targets[t] < 0) continue;
    double mx = logits[t][0];
    for (double v : logits[t]) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits[t]) z += std::exp(v - mx);
    total += -(logits[t][static_cast<std::size_t>(targets[t])] - mx - std::log(z));
    ++n;
  }
  return total / n;
}

// ---------------------------------------------------------------------------
// AdamW on one scalar, decoupled decay, bias-corrected.
struct AdamScalar {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double p, double g, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mh = m / (1.0 - std::pow(b1, t));
    const double vh = v / (1.0 - std::pow(b2, t));
    p -= lr * wd * p;
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
