#!/usr/bin/env python3
"""Generates the MOS fixtures and their goldens with a standalone pipeline.

Outputs (next to this directory's parent):
  ratings_15.csv            14 consistent raters plus one uniform-random rater
  ratings_15.mos.csv        golden rescaled MOS table
  ratings_15.zscores.csv    golden z-score MOS table
  ratings_15.rejected.txt   golden rejected participants, one per line
  borderline_retained.csv   rater `edge` with P=1, Q=1 over 40 ratings
  borderline_rejected.csv   rater `edge` with P=2, Q=2 over 40 ratings
"""

import math
import random
from collections import defaultdict
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent
DIMS = ["text_alignment", "fidelity", "quality", "overall"]


def pstats(xs):
    n = len(xs)
    m = sum(xs) / n
    v = sum((x - m) ** 2 for x in xs) / n
    return m, math.sqrt(v)


def screen(rows):
    """rows: list of (participant, sample, dim, score). Returns counts, rejected."""
    by_stim = defaultdict(list)
    total = defaultdict(int)
    for p, s, d, x in rows:
        by_stim[(s, d)].append((p, x))
        total[p] += 1
    P = defaultdict(int)
    Q = defaultdict(int)
    for ratings in by_stim.values():
        xs = [x for _, x in ratings]
        m, sd = pstats(xs)
        if sd == 0:
            continue
        m2 = sd * sd
        m4 = sum((x - m) ** 4 for x in xs) / len(xs)
        beta2 = m4 / (m2 * m2)
        k = 2.0 if 2.0 <= beta2 <= 4.0 else math.sqrt(20.0)
        for p, x in ratings:
            if x > m + k * sd:
                P[p] += 1
            elif x < m - k * sd:
                Q[p] += 1
    rejected = set()
    for p in total:
        f = P[p] + Q[p]
        if f > 0 and f / total[p] > 0.05 and abs(P[p] - Q[p]) / f < 0.3:
            rejected.add(p)
    return {p: (P[p], Q[p], total[p]) for p in total}, rejected


def pipeline(rows):
    counts, rejected = screen(rows)
    per_p = defaultdict(list)
    for p, _, _, x in rows:
        per_p[p].append(x)
    stats = {p: pstats(xs) for p, xs in per_p.items()}
    sums = defaultdict(lambda: [0.0, 0])
    for p, s, d, x in rows:
        if p in rejected:
            continue
        m, sd = stats[p]
        z = 0.0 if sd == 0 else (x - m) / sd
        sums[(s, d)][0] += z
        sums[(s, d)][1] += 1
    ztab = {k: (v[0] / v[1], v[1]) for k, v in sums.items()}
    lo, hi = 1.0, 5.0
    bounds = {}
    for (s, d), (z, _) in ztab.items():
        b = bounds.setdefault(d, [math.inf, -math.inf])
        b[0] = min(b[0], z)
        b[1] = max(b[1], z)
    scaled = {}
    for (s, d), (z, n) in ztab.items():
        mn, mx = bounds[d]
        v = (lo + hi) / 2 if mx == mn else min(hi, max(lo, lo + (z - mn) * (hi - lo) / (mx - mn)))
        scaled[(s, d)] = (v, n)
    return counts, rejected, ztab, scaled


def table_csv(tab):
    key = lambda k: (k[0], DIMS.index(k[1]))
    lines = ["sample,dimension,mos,raters"]
    for k in sorted(tab, key=key):
        v, n = tab[k]
        lines.append(f"{k[0]},{k[1]},{v:.4f},{n}")
    return "\n".join(lines) + "\n"


def ratings_csv(rows):
    lines = ["participant,sample,dimension,score"]
    for p, s, d, x in rows:
        lines.append(f"{p},{s},{d},{x:g}")
    return "\n".join(lines) + "\n"


def fifteen_rater_fixture():
    for seed in range(1000):
        rng = random.Random(seed)
        samples = [f"s{i:02d}" for i in range(1, 16)]
        quality = {(s, d): rng.uniform(2.5, 8.5) for s in samples for d in DIMS}
        rows = []
        for i in range(1, 15):
            p = f"p{i:02d}"
            bias = rng.gauss(0, 0.5)
            for s in samples:
                for d in DIMS:
                    x = round(quality[(s, d)] + bias + rng.gauss(0, 0.6))
                    rows.append((p, s, d, float(min(10, max(1, x)))))
        for s in samples:
            for d in DIMS:
                rows.append(("p15", s, d, float(rng.randint(1, 10))))
        counts, rejected, ztab, scaled = pipeline(rows)
        if rejected == {"p15"}:
            return seed, rows, counts, ztab, scaled
    raise SystemExit("no seed satisfied the fixture constraints")


def borderline_fixtures():
    rng = random.Random(11)
    samples = [f"b{i:02d}" for i in range(1, 11)]
    quality = {(s, d): rng.uniform(3, 8) for s in samples for d in DIMS}
    raters = [f"r{i:02d}" for i in range(1, 12)] + ["edge"]
    base = {}
    for p in raters:
        for s in samples:
            for d in DIMS:
                noise = 0.0 if p == "edge" else rng.gauss(0, 0.4)
                base[(p, s, d)] = round(quality[(s, d)] + noise, 1)

    def rows_of(scores):
        return [(p, s, d, scores[(p, s, d)]) for p in raters for s in samples for d in DIMS]

    stims = [(s, d) for s in samples for d in DIMS]
    counts, _ = screen(rows_of(base))
    assert counts["edge"][:2] == (0, 0), counts["edge"]

    def plant(n_each):
        scores = dict(base)
        used = set()
        want = [0, 0]
        for direction in (+1, -1):
            done = 0
            for s, d in stims:
                if done == n_each:
                    break
                if (s, d) in used:
                    continue
                for tenths in range(8, 40):
                    trial = dict(scores)
                    trial[("edge", s, d)] = round(quality[(s, d)] + direction * tenths / 10, 1)
                    c, _ = screen(rows_of(trial))
                    goal = (want[0] + (direction > 0), want[1] + (direction < 0))
                    if c["edge"][:2] == goal and all(c[r] == counts[r] for r in raters if r != "edge"):
                        scores = trial
                        used.add((s, d))
                        want = list(goal)
                        done += 1
                        break
            assert done == n_each
        return rows_of(scores)

    return plant(1), plant(2)


def main():
    seed, rows, counts, ztab, scaled = fifteen_rater_fixture()
    (OUT / "ratings_15.csv").write_text(ratings_csv(rows))
    (OUT / "ratings_15.mos.csv").write_text(table_csv(scaled))
    (OUT / "ratings_15.zscores.csv").write_text(table_csv(ztab))
    (OUT / "ratings_15.rejected.txt").write_text("p15\n")
    print(f"15-rater fixture seed {seed}; p15 counts {counts['p15']}")

    retained, rejected = borderline_fixtures()
    for name, rows in (("borderline_retained", retained), ("borderline_rejected", rejected)):
        (OUT / f"{name}.csv").write_text(ratings_csv(rows))
        counts, rej = screen(rows)
        print(name, counts["edge"], sorted(rej))


if __name__ == "__main__":
    main()
