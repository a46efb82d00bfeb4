"""Ablation over which group pairs the dual variable may weight: all four,
intra-group only, or inter-group only.  Warm starts from an AUCMax run.

    python scripts/ablation.py [--init runs/synthetic/aucmax] [--out runs/ablation]
"""
import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from fairauc.cli import main as fairauc

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PAIRS = ("aa", "ab", "ba", "bb")
MODES = ("all", "intra_only", "inter_only")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=CONFIGS / "synthetic_minimax.json", type=Path)
    ap.add_argument("--init", type=Path, help="AUCMax run directory (trained first if missing)")
    ap.add_argument("--out", default="runs/ablation", type=Path)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    init = args.init or args.out / "aucmax"
    if not (init / "manifest.json").exists():
        if fairauc(["train", "--config", str(CONFIGS / "synthetic_aucmax.json"), "-o", str(init),
                    "--jobs", str(args.jobs)]) != 0:
            sys.exit("AUCMax warm start failed")
    base = json.loads(args.config.read_text())
    base.pop("init_from", None)
    rows = {}
    with tempfile.TemporaryDirectory() as tmp:
        for mode in MODES:
            doc = {**base, "label": f"minimax/{mode}",
                   "trainer": {**base["trainer"], "group_mode": mode}}
            cfg = Path(tmp) / f"{mode}.json"
            cfg.write_text(json.dumps(doc))
            if fairauc(["train", "--config", str(cfg), "-o", str(args.out / mode),
                        "--init-from", str(init), "--jobs", str(args.jobs)]) != 0:
                sys.exit(f"{mode} failed")
            per_seed = json.loads((args.out / mode / "manifest.json").read_text())["aggregate"]["per_seed"]
            rows[mode] = np.array([[r["group_aucs"][k] for k in PAIRS] for r in per_seed.values()])
    print(f"\n{'group_mode':12s}" + "".join(f"{k:>8s}" for k in PAIRS) + f"{'min':>8s}")
    for mode, g in rows.items():
        print(f"{mode:12s}" + "".join(f"{v:8.3f}" for v in g.mean(axis=0)) + f"{g.min(axis=1).mean():8.3f}")
    print()
    return fairauc(["compare", str(init), *(str(args.out / m) for m in MODES), "-o", str(args.out / "compare")])


if __name__ == "__main__":
    sys.exit(main())
