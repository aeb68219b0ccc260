#!/usr/bin/env python3
"""Writes flops_manifest.txt: every matmul of one full-parameter training
sequence (forward and backward) for d_model=32, n_heads=4, n_layers=2,
d_ff=64, vocab=16, seq=16. One line per matmul: phase name m n k."""
import sys

V, D, H, L, F, N = 16, 32, 4, 2, 64, 16
DH = D // H


def linears():
    return [("q", D, D), ("k", D, D), ("v", D, D), ("o", D, D), ("gate", D, F), ("up", D, F), ("down", F, D)]


def main():
    rows = []
    for l in range(L):
        for role, din, dout in linears():
            rows.append(("forward", f"layer.{l}.{role}", N, dout, din))
        for h in range(H):
            rows.append(("forward", f"layer.{l}.head{h}.scores", N, N, DH))
            rows.append(("forward", f"layer.{l}.head{h}.mix", N, DH, N))
    rows.append(("forward", "head", N, V, D))

    rows.append(("backward", "head.dx", N, D, V))
    rows.append(("backward", "head.dW", V, D, N))
    for l in reversed(range(L)):
        for role, din, dout in linears():
            rows.append(("backward", f"layer.{l}.{role}.dx", N, din, dout))
            rows.append(("backward", f"layer.{l}.{role}.dW", dout, din, N))
        for h in range(H):
            rows.append(("backward", f"layer.{l}.head{h}.dP", N, N, DH))
            rows.append(("backward", f"layer.{l}.head{h}.dV", N, DH, N))
            rows.append(("backward", f"layer.{l}.head{h}.dQ", N, DH, N))
            rows.append(("backward", f"layer.{l}.head{h}.dK", N, DH, N))
    path = sys.argv[1] if len(sys.argv) > 1 else "flops_manifest.txt"
    with open(path, "w") as f:
        f.write("# phase name m n k  (flops = 2*m*n*k)\n")
        for phase, name, m, n, k in rows:
            f.write(f"{phase} {name} {m} {n} {k}\n")


if __name__ == "__main__":
    main()
