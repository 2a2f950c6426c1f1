#!/usr/bin/env python3
"""Compare pretrained vs from-scratch fine-tuning in a low-label regime.

Pretraining uses the full unlabeled training split; both arms fine-tune on
the same small labeled subset and are scored on the test split.
"""
from __future__ import annotations

import argparse

import numpy as np

from tactile_transformer.experiments import run_benefit_study


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/benefit", help="output directory")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--labels", type=int, default=32, help="total labeled samples")
    args = parser.parse_args()

    study = run_benefit_study(args.out, seeds=args.seeds, labeled_total=args.labels)
    print(f"pretrained acc@1 per seed: {[round(a, 4) for a in study.pretrained]}")
    print(f"from-scratch acc@1 per seed: {[round(a, 4) for a in study.scratch]}")
    print(
        f"means: pretrained {np.mean(study.pretrained):.4f}"
        f" vs scratch {np.mean(study.scratch):.4f} (margin {study.margin:+.4f})"
    )


if __name__ == "__main__":
    main()
