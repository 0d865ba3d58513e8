#!/usr/bin/env python3
"""Writes an id,score prediction/ground-truth pair and its golden report via scipy."""

import random
from pathlib import Path

from scipy.stats import pearsonr, spearmanr

OUT = Path(__file__).resolve().parent.parent


def main():
    rng = random.Random(5)
    ids = [f"img_{i:03d}" for i in range(40)]
    gt = {i: round(rng.uniform(1, 5), 2) for i in ids}
    pred = {i: round(min(5, max(1, gt[i] + rng.gauss(0, 0.6))) * 4) / 4 for i in ids}
    shuffled = ids[:]
    rng.shuffle(shuffled)
    (OUT / "eval_gt.csv").write_text("id,score\n" + "".join(f"{i},{gt[i]}\n" for i in ids))
    (OUT / "eval_pred.csv").write_text("".join(f"{i},{pred[i]}\n" for i in shuffled))
    x = [pred[i] for i in ids]
    y = [gt[i] for i in ids]
    plcc = pearsonr(x, y)[0]
    srocc = spearmanr(x, y)[0]
    (OUT / "eval_report.csv").write_text(
        f"plcc,srocc,main_score\n{plcc:.4f},{srocc:.4f},{(plcc + srocc) / 2:.4f}\n"
    )
    print(plcc, srocc)


if __name__ == "__main__":
    main()
