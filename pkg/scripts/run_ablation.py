#!/usr/bin/env python3
"""Run the five-strategy embedding/pretraining ablation over several seeds.

Writes per-strategy tables under --out and prints the two class-subset
margins (full model vs the single-embedding strategies).
"""
from __future__ import annotations

import argparse

import numpy as np

from tactile_transformer.experiments import run_ablation_study


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation", help="output directory")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    study = run_ablation_study(args.out, seeds=args.seeds)
    print("strategy  mean_acc1  spatial_subset  temporal_subset")
    for strategy in sorted(study.acc1):
        print(
            f"{strategy:>8}  {np.mean(study.acc1[strategy]):9.4f}"
            f"  {np.mean(study.spatial_subset[strategy]):14.4f}"
            f"  {np.mean(study.temporal_subset[strategy]):15.4f}"
        )
    print(f"temporal margin (full vs spatial-only): {study.temporal_margin():+.4f}")
    print(f"spatial margin  (full vs temporal-only): {study.spatial_margin():+.4f}")


if __name__ == "__main__":
    main()
