"""Overall and Min/Max test AUC of AUCMax, MinimaxFairAUC and EqualAUC on
user-supplied Adult and/or Compas CSVs.

    python scripts/table2.py --compas compas-scores-two-years.csv --adult adult.csv

The config templates in configs/ describe the expected columns.
"""
import argparse
import json
import sys
import tempfile
from pathlib import Path

from fairauc.cli import main as fairauc

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def config_for(dataset, algorithm, csv, workdir):
    template = CONFIGS / f"{dataset}_{'aucmax' if algorithm == 'aucmax' else 'minimax'}.json"
    doc = json.loads(template.read_text())
    doc["dataset"]["csv"]["path"] = str(Path(csv).resolve())
    doc["algorithm"] = algorithm
    doc.pop("init_from", None)
    path = workdir / f"{dataset}_{algorithm}.json"
    path.write_text(json.dumps(doc))
    return path


def run_dataset(dataset, csv, out, jobs):
    with tempfile.TemporaryDirectory() as tmp:
        runs = []
        for algo in ("aucmax", "minimax", "equalauc"):
            argv = ["train", "--config", str(config_for(dataset, algo, csv, Path(tmp))),
                    "-o", str(out / dataset / algo), "--jobs", str(jobs)]
            if algo != "aucmax":
                argv += ["--init-from", str(out / dataset / "aucmax")]
            if fairauc(argv) != 0:
                sys.exit(f"{dataset}/{algo} failed")
            runs.append(str(out / dataset / algo))
    print(f"\n{dataset}")
    return fairauc(["compare", *runs, "-o", str(out / dataset / "compare")])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--adult")
    ap.add_argument("--compas")
    ap.add_argument("--out", default="runs/table2", type=Path)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    if not (args.adult or args.compas):
        ap.error("pass --adult and/or --compas")
    status = 0
    for dataset in ("adult", "compas"):
        csv = getattr(args, dataset)
        if csv:
            status |= run_dataset(dataset, csv, args.out, args.jobs)
    return status


if __name__ == "__main__":
    sys.exit(main())
