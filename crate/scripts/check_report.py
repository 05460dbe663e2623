#!/usr/bin/env python3
"""Recompute evaluation metrics from a `scores.csv` independently of the Rust code.

Reads the per-response scores written by `hyconf evaluate` and recomputes
AUROC (scikit-learn), AUARC, accuracy at the rejection grid, Brier, ECE and
MCE (numpy), then prints them as JSON. The result was frozen as
`crates/core/tests/fixtures/expected_report.json`.

    python3 scripts/check_report.py report/scores.csv > expected_report.json
"""

import csv
import json
import sys
from collections import defaultdict

import numpy as np
from sklearn.metrics import roc_auc_score

BINS = 10
GRID = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
ORDER = ["verbalized", "latent", "consistency", "hybrid_without_aleatoric", "hybrid_with_aleatoric"]


def metrics(rows):
    p = np.array([float(r["confidence_correct"]) for r in rows])
    decision = np.array([int(r["decision"]) for r in rows])
    gold = np.array([int(r["gold_label"]) for r in rows])
    n = len(p)

    conf = np.where(decision == 1, p, 1.0 - p)
    right = (decision == gold).astype(float)

    # accuracy-rejection: drop the least confident first, stable among ties
    order = np.argsort(conf, kind="mergesort")
    kept_right = right.sum() - np.concatenate([[0.0], np.cumsum(right[order])[:-1]])
    y = kept_right / (n - np.arange(n))
    x = np.arange(n) / n
    auarc = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))
    acc_at = [[r, float(y[int(np.floor(r * n + 1e-9))])] for r in GRID]

    idx = np.minimum((p * BINS).astype(int), BINS - 1)
    ece, mce = 0.0, 0.0
    for b in range(BINS):
        m = idx == b
        if m.any():
            gap = abs(gold[m].mean() - p[m].mean())
            ece += m.sum() / n * gap
            mce = max(mce, gap)

    return {
        "n": n,
        "accuracy": float(right.mean()),
        "auroc": float(roc_auc_score(right, conf)),
        "auroc_gold": float(roc_auc_score(gold, p)),
        "auarc": auarc,
        "brier": float(np.mean((p - gold) ** 2)),
        "ece": float(ece),
        "mce": float(mce),
        "accuracy_at_rejection": acc_at,
    }


def main() -> None:
    by_method = defaultdict(list)
    with open(sys.argv[1], newline="") as f:
        for row in csv.DictReader(f):
            by_method[row["method"]].append(row)
    report = {m: metrics(by_method[m]) for m in ORDER if m in by_method}
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
