#!/usr/bin/env python3
"""Exact expected training reward of the synthetic judge, by summing over bins.

For each ground truth on the 0.25 grid and each output bin, the probability
of landing in that bin is a difference of normal CDFs; no sampling involved.
"""

import math

from scipy.stats import norm

GRID = [1 + 0.25 * j for j in range(17)]


def acc(kind, delta, r_min, d0):
    if kind == "l1":
        r = 1 - (1 - r_min) / d0 * delta
    elif kind == "gaussian":
        sigma = d0 / math.sqrt(2 * math.log(1 / r_min))
        r = math.exp(-((delta / 4) ** 2) / (2 * sigma ** 2))
    return max(r, r_min)


def expected(kind, k, cost, d0=1.0, r_min=0.05, base=1.2, lam=1.0):
    s = base / math.sqrt(1 + k)
    total = 0.0
    for gt in GRID:
        for j, c in enumerate(GRID):
            lo = -math.inf if j == 0 else c - 0.125
            hi = math.inf if j == 16 else c + 0.125
            p = norm.cdf((hi - gt) / s) - norm.cdf((lo - gt) / s)
            total += p * acc(kind, abs(c - gt), r_min, d0)
    return total / len(GRID) + lam - cost * k


def main():
    for name, kind, cost, d0 in [
        ("l1 c=0.08", "l1", 0.08, 1.0),
        ("l1 c=0", "l1", 0.0, 1.0),
        ("gaussian d0=0.05", "gaussian", 0.0, 0.05),
    ]:
        row = [expected(kind, k, cost, d0) for k in range(7)]
        print(name, " ".join(f"{v:.6f}" for v in row), f"gap {max(row) - min(row):.6f}")
    r35 = expected("l1", 35, 0.0) - 1.0
    print(f"l1 sigma=0.2 (k=35) r_acc {r35:.6f}; closed form {1 - 0.95 * 0.2 * math.sqrt(2 / math.pi):.6f}")


if __name__ == "__main__":
    main()
