#!/usr/bin/env python3
"""Generate the bundled 300-record synthetic corpus.

Generative process
------------------
* 8 semantic regions in an 8-dimensional embedding space, centers far apart,
  members drawn as isotropic Gaussians around their center.
* Regions 0-4 are label-pure: every response in a region shares one gold
  label, and the grader decides correctly with probability 0.95.
* Regions 5-7 are mixed: gold labels are a fair coin and the grader's decision
  is right with probability 0.5, so grading errors concentrate where the
  gold-label entropy of the region is high.
* The three model signals depend only on whether the grader's decision is
  right, never on the region, and only weakly. Region entropy therefore
  carries information about correctness that the signals do not.

Run from the repository root:

    python3 scripts/gen_synthetic.py > crates/core/tests/fixtures/synthetic_300.jsonl
"""

import json
import sys

import numpy as np

SEED = 20240611
N = 300
DIM = 8
PURE_REGIONS = 5
MIXED_REGIONS = 3
SAMPLES = 5

WORDS = "cell energy light plant water root leaf sun food grow heat move".split()


def main() -> None:
    rng = np.random.default_rng(SEED)
    regions = PURE_REGIONS + MIXED_REGIONS
    centers = rng.normal(0.0, 4.0, size=(regions, DIM))
    pure_gold = [r % 2 for r in range(PURE_REGIONS)]

    out = []
    for i in range(N):
        region = i % regions
        emb = centers[region] + rng.normal(0.0, 0.6, size=DIM)
        if region < PURE_REGIONS:
            gold = pure_gold[region]
            right = rng.random() < 0.95
        else:
            gold = int(rng.random() < 0.5)
            right = rng.random() < 0.5
        pred = gold if right else 1 - gold
        c = 1.0 if right else 0.0

        verbalized = float(np.clip(0.72 + 0.06 * c + rng.normal(0.0, 0.12), 0.0, 1.0))
        margin = 0.6 + 0.5 * c + rng.normal(0.0, 1.0)
        top = -0.2 - abs(rng.normal(0.0, 0.3))
        logliks = {str(pred): top, str(1 - pred): top - margin}
        agree_p = 0.65 + 0.12 * c
        samples = [pred if rng.random() < agree_p else 1 - pred for _ in range(SAMPLES)]

        n_words = int(rng.integers(4, 30))
        text = " ".join(WORDS[j] for j in rng.integers(0, len(WORDS), size=n_words))
        line = {
            "id": f"r{i:03d}",
            "question_id": f"q{region}",
            "text": text,
            "gold_label": gold,
            "embedding": [round(float(v), 6) for v in emb],
            "pred_label": pred,
            "label_logliks": {k: round(float(v), 6) for k, v in logliks.items()},
            "sampled_labels": samples,
        }
        # a handful of responses without a verbalized score exercise the
        # lenient default
        if i % 50 != 7:
            line["verbalized"] = round(verbalized, 4)
        out.append(json.dumps(line, sort_keys=True))
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
