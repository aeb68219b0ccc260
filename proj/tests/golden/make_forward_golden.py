#!/usr/bin/env python3
"""Writes forward_golden.json: logits of the decoder computed with plain loops.

Parameters come from a closed-form recipe (no RNG) so the C++ test can rebuild
them exactly:  w[k][i][j] = 0.3 * sin(seed*1.37 + k*2.11 + (i*cols + j)*0.731) / sqrt(cols)
for weight matrices and 1 + 0.1*cos(same phase) for norm gains, with k the
matrix index in checkpoint order.
"""
import json
import math
import sys

SEED = 5
V, D, H, L, F, S = 11, 8, 2, 2, 12, 8
EPS = 1e-6
TOKENS = [(SEED * 7 + 3 * t) % V for t in range(7)]


def shapes():
    out = [("tok_embedding", V, D, False), ("pos_embedding", S, D, False)]
    for l in range(L):
        for role, r, c in [("q", D, D), ("k", D, D), ("v", D, D), ("o", D, D),
                           ("gate", F, D), ("up", F, D), ("down", D, F)]:
            out.append((f"layer.{l}.{role}", r, c, False))
        out.append((f"layer.{l}.attn_norm", 1, D, True))
        out.append((f"layer.{l}.mlp_norm", 1, D, True))
    out.append(("final_norm", 1, D, True))
    out.append(("head", V, D, False))
    return out


def make_params():
    p = {}
    for k, (name, r, c, gain) in enumerate(shapes()):
        m = []
        for i in range(r):
            row = []
            for j in range(c):
                ph = SEED * 1.37 + k * 2.11 + (i * c + j) * 0.731
                row.append(1.0 + 0.1 * math.cos(ph) if gain else 0.3 * math.sin(ph) / math.sqrt(c))
            m.append(row)
        p[name] = m
    return p


def linear(x, w):  # y[t][o] = sum_i x[t][i] * w[o][i]
    return [[sum(xt[i] * wo[i] for i in range(len(xt))) for wo in w] for xt in x]


def rms(x, g):
    out = []
    for xt in x:
        r = math.sqrt(sum(v * v for v in xt) / len(xt) + EPS)
        out.append([xt[j] / r * g[0][j] for j in range(len(xt))])
    return out


def forward(p, toks):
    n, dh = len(toks), D // H
    x = [[p["tok_embedding"][tk][j] + p["pos_embedding"][t][j] for j in range(D)] for t, tk in enumerate(toks)]
    for l in range(L):
        pre = f"layer.{l}."
        h = rms(x, p[pre + "attn_norm"])
        q, k, v = linear(h, p[pre + "q"]), linear(h, p[pre + "k"]), linear(h, p[pre + "v"])
        att = [[0.0] * D for _ in range(n)]
        for hd in range(H):
            off = hd * dh
            for i in range(n):
                scores = [sum(q[i][off + a] * k[j][off + a] for a in range(dh)) / math.sqrt(dh) for j in range(i + 1)]
                mx = max(scores)
                e = [math.exp(s - mx) for s in scores]
                z = sum(e)
                for a in range(dh):
                    att[i][off + a] = sum(e[j] / z * v[j][off + a] for j in range(i + 1))
        o = linear(att, p[pre + "o"])
        x = [[x[t][j] + o[t][j] for j in range(D)] for t in range(n)]
        h = rms(x, p[pre + "mlp_norm"])
        g, u = linear(h, p[pre + "gate"]), linear(h, p[pre + "up"])
        act = [[g[t][f] / (1.0 + math.exp(-g[t][f])) * u[t][f] for f in range(F)] for t in range(n)]
        dn = linear(act, p[pre + "down"])
        x = [[x[t][j] + dn[t][j] for j in range(D)] for t in range(n)]
    return linear(rms(x, p["final_norm"]), p["head"])


def main():
    logits = forward(make_params(), TOKENS)
    out = {"seed": SEED, "vocab_size": V, "d_model": D, "n_heads": H, "n_layers": L, "d_ff": F,
           "max_seq_len": S, "tokens": TOKENS, "logits": logits}
    path = sys.argv[1] if len(sys.argv) > 1 else "forward_golden.json"
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
