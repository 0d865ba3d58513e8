#!/usr/bin/env python3
"""Writes reward_golden.jsonl: requests with expected composite rewards.

Expected reals are strings with 6 fractional digits. The parser and reward
curves below are written from the output contract, not from the Rust code.
"""

import json
import math
import random
import re
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "reward_golden.jsonl"
TAGS = ["<think>", "</think>", "<answer>", "</answer>"]
FRAGMENTS = ["<think", "</think", "<answer", "</answer"]
DECIMAL = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)")


def parse(text):
    pos = []
    for t in TAGS:
        if text.count(t) != 1:
            return False, None
        pos.append(text.index(t))
    if pos != sorted(pos) or len(set(pos)) != 4:
        return False, None
    to, tc, ao, ac = pos
    think = text[to + len(TAGS[0]):tc]
    between = text[tc + len(TAGS[1]):ao]
    answer = text[ao + len(TAGS[2]):ac]
    outside = text[:to] + text[ac + len(TAGS[3]):]
    if any(f in think or f in answer for f in FRAGMENTS):
        return False, None
    if outside.strip() or between.strip():
        return False, None
    body = answer.strip()
    if not DECIMAL.fullmatch(body):
        return False, None
    return True, float(body)


def accuracy(pred, gt, kind, r_min, d0):
    delta = abs(pred - gt)
    if kind == "l1":
        r = 1 - (1 - r_min) / d0 * delta
    elif kind == "l2":
        r = 1 - (1 - r_min) / d0 ** 2 * delta ** 2
    elif kind == "laplacian":
        tau = d0 / math.log(1 / r_min)
        r = math.exp(-(delta / 4) / tau)
    else:
        sigma = d0 / math.sqrt(2 * math.log(1 / r_min))
        r = math.exp(-((delta / 4) ** 2) / (2 * sigma ** 2))
    return max(r, r_min)


def expected(response, gt, spec):
    ok, score = parse(response)
    if ok:
        r_acc = accuracy(score, gt, spec["kind"], spec["r_min"], spec["d_0"])
        r_fmt = 1.0
    else:
        r_acc, r_fmt = 0.0, 0.0
    return {
        "parsed_score": None if score is None else f"{score:.6f}",
        "format_ok": ok,
        "r_acc": f"{r_acc:.6f}",
        "r_fmt": f"{r_fmt:.6f}",
        "r_total": f"{r_acc + spec['lambda'] * r_fmt:.6f}",
    }


def wrap(answer, think="The edit keeps the layout."):
    return f"<think>{think}</think><answer>{answer}</answer>"


FIXED_RESPONSES = [
    wrap("3.75"),
    wrap("3"),
    wrap("3."),
    wrap(".5"),
    wrap("+4.25"),
    wrap("-2"),
    wrap(" 2.5 "),
    wrap("7.125"),
    "  \n" + wrap("1.5") + "\n ",
    "<think></think>\n<answer>4</answer>",
    wrap("1e0"),
    wrap("inf"),
    wrap("nan"),
    wrap(""),
    wrap("."),
    wrap("three"),
    wrap("3,5"),
    "Score: 3.5",
    "preamble " + wrap("3"),
    wrap("3") + " trailing",
    "<answer>3</answer><think>x</think>",
    "<think>x</think>note<answer>3</answer>",
    "<think>x</think><answer>3</answer><answer>4</answer>",
    "<think>x <answer>2</think><answer>3</answer>",
    "<think>x</think><answer>3",
    "",
]


def main():
    rng = random.Random(20240601)
    specs = []
    for kind in ["l1", "l2", "laplacian", "gaussian"]:
        specs.append({"kind": kind, "r_min": 0.05, "d_0": 1.0, "lambda": 1.0})
        specs.append({"kind": kind, "r_min": 0.1, "d_0": 2.0, "lambda": 0.5})
        specs.append({"kind": kind, "r_min": 0.01, "d_0": 0.25, "lambda": 0.0})
    lines = []
    for spec in specs:
        for response in FIXED_RESPONSES:
            gt = rng.choice([1.0, 2.25, 3.0, 3.75, 5.0])
            lines.append({"response": response, "gt_score": gt, "spec": spec})
        for _ in range(20):
            pred = round(rng.uniform(0.5, 5.5), rng.choice([0, 1, 2, 3]))
            gt = round(rng.uniform(1, 5), 2)
            lines.append({"response": wrap(repr(pred)), "gt_score": gt, "spec": spec})
    with OUT.open("w") as f:
        for case in lines:
            case["expected"] = expected(case["response"], case["gt_score"], case["spec"])
            f.write(json.dumps(case, sort_keys=True) + "\n")
    print(f"wrote {len(lines)} cases to {OUT}")


if __name__ == "__main__":
    main()
