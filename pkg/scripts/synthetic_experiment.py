"""Train AUCMax, then warm-start MinimaxFairAUC and EqualAUC from it, on the
2-D Gaussian synthetic data; print per-pair test AUCs and a comparison table.

    python scripts/synthetic_experiment.py [--out runs] [--jobs 1]
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from fairauc.cli import main as fairauc

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PAIRS = ("aa", "ab", "ba", "bb")


def train(name, out, init=None, jobs=1):
    argv = ["train", "--config", str(CONFIGS / f"synthetic_{name}.json"), "-o", str(out / name),
            "--jobs", str(jobs)]
    if init:
        argv += ["--init-from", str(out / init)]
    if fairauc(argv) != 0:
        sys.exit(f"training {name} failed")
    per_seed = json.loads((out / name / "manifest.json").read_text())["aggregate"]["per_seed"]
    return np.array([[rep["group_aucs"][k] for k in PAIRS] for rep in per_seed.values()])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic", type=Path)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    groups = {"aucmax": train("aucmax", args.out, jobs=args.jobs)}
    for name in ("minimax", "equalauc"):
        groups[name] = train(name, args.out, "aucmax", args.jobs)
    print("\nmean test AUC per pair (positive group, negative group)")
    print(f"{'':10s}" + "".join(f"{k:>8s}" for k in PAIRS) + f"{'min':>8s}")
    for name, g in groups.items():
        m = g.mean(axis=0)
        print(f"{name:10s}" + "".join(f"{v:8.3f}" for v in m) + f"{g.min(axis=1).mean():8.3f}")
    print()
    return fairauc(["compare", *(str(args.out / n) for n in groups), "-o", str(args.out / "compare")])


if __name__ == "__main__":
    sys.exit(main())
