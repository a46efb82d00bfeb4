"""Command-line harness: ``fairauc {synth|train|evaluate|compare|sweep}``.

Exit codes: 0 on success, 1 on a runtime failure (including any failed seed),
2 on a usage or configuration error.  Set ``FAIRAUC_LOG`` (e.g. ``INFO``) for
progress logging on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from . import model as M
from .dataset import PAIRS, Standardizer, read_canonical_csv, write_csv
from .errors import ArgumentError, FairAucError, UsageError
from .experiment import RunConfig, checkpoint_doc, load_config, load_source, prepare, run_seed, synth_dataset
from .fairtrain import TrainerConfig, seed_sweep
from .metrics import group_aucs, group_balanced_roc, metrics_report, overall_auc, roc_curve
from .serialize import write_csv_rows, write_json, write_text_atomic

log = logging.getLogger("fairauc")

MANIFEST = "manifest.json"
MANIFEST_FORMAT = 1
ROC_NAMES = ("overall", "aa", "ab", "ba", "bb", "group_balanced")
ROC_CHECK_TOL = 1e-10


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _floats(text: str, what: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--{what}: expected comma-separated numbers, got {text!r}") from None


def _read_json(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"{what} {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_init(path, seed: int):
    """Checkpoint for ``seed`` from a run directory, or the file itself.

    A run directory contributes the checkpoint of the same seed when it has
    one and otherwise its first seed.  Returns (params, norm, lineage).
    """
    path = Path(path)
    if path.is_dir():
        manifest = _read_json(path / MANIFEST, "manifest")
        seeds = manifest.get("seeds", {})
        if not seeds:
            raise UsageError(f"{path}: manifest lists no seeds")
        key = str(seed) if str(seed) in seeds else sorted(seeds, key=int)[0]
        ck = path / seeds[key]["checkpoint"]
    else:
        ck = path
    doc = _read_json(ck, "checkpoint")
    try:
        params, norm, meta = M.from_checkpoint(doc)
    except (ArgumentError, KeyError) as exc:
        raise UsageError(f"{ck}: not a valid checkpoint ({exc})") from None
    lineage = {
        "init_from": str(path),
        "checkpoint": str(ck),
        "sha256": _sha256(ck),
        "source_algorithm": meta.get("algorithm"),
        "source_seed": meta.get("seed"),
    }
    return params, norm, lineage


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    custom_flags = [f for f in ("counts", "means", "variances") if getattr(args, f) is not None]
    if args.name != "custom" and custom_flags:
        raise UsageError(f"--{custom_flags[0]} only applies to the custom spec")
    params = {}
    if args.name == "custom":
        if args.means is None:
            raise UsageError("custom spec needs --means (ordered a-,a+,b-,b+)")
        params["kind"] = args.kind
        if args.kind == "scores":
            params["means"] = _floats(args.means, "means")
        else:
            params["means"] = [_floats(cell, "means") for cell in args.means.split(";")]
            if any(len(m) != 2 for m in params["means"]):
                raise UsageError("--means: gaussian2d cells need 2 coordinates each, separated by ';'")
        if args.counts is not None:
            params["counts"] = [int(c) for c in _floats(args.counts, "counts")]
        if args.variances is not None:
            params["variances"] = _floats(args.variances, "variances")
    elif args.count is not None:
        params["count"] = args.count
    try:
        ds = synth_dataset(args.name, params, args.seed)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    write_csv(ds, args.out)
    log.info("wrote %d rows to %s", ds.n, args.out)
    return 0


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def _config_from_args(args):
    """Load the config and apply command-line overrides; returns (cfg, out_dir, init_path).

    Relative paths inside a config resolve against the config's directory;
    paths given on the command line resolve against the working directory.
    """
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.output_dir = args.out
        cfg_out = Path(args.out)
    else:
        cfg_out = cfg.resolve(cfg.output_dir)
    if getattr(args, "init_from", None) is not None:
        cfg.init_from = str(Path(args.init_from))
        init_path = Path(args.init_from)
    elif cfg.init_from is not None:
        init_path = cfg.resolve(cfg.init_from)
    else:
        init_path = None
    return cfg, cfg_out, init_path


def train_one_seed(cfg: RunConfig, run_dir: Path, init_path, seed: int) -> dict:
    """Train one seed and write its artifacts; returns the test report plus paths."""
    model0, lineage = None, None
    if init_path is not None:
        params, norm, lineage = resolve_init(init_path, seed)
        if params.kind != cfg.model:
            raise UsageError(f"init checkpoint is a {params.kind} model, config asks for {cfg.model}")
        model0 = (params, norm)
    run = run_seed(cfg, seed, model0)
    sub = run_dir / f"seed_{seed}"
    write_json(sub / "checkpoint.json", checkpoint_doc(run, cfg))
    run.result.trajectory.to_csv(sub / "trajectory.csv")
    summary = run.summary()
    summary["lineage"] = lineage
    write_json(sub / "summary.json", summary)
    report = run.test_report.to_dict()
    report["artifacts"] = {
        "checkpoint": f"seed_{seed}/checkpoint.json",
        "trajectory": f"seed_{seed}/trajectory.csv",
        "summary": f"seed_{seed}/summary.json",
    }
    report["lineage"] = lineage
    return report


def cmd_train(args) -> int:
    cfg, run_dir, init_path = _config_from_args(args)
    if init_path is not None and not init_path.exists():
        raise UsageError(f"--init-from: {init_path} does not exist")
    started = time.time()
    src = load_source(cfg, cfg.seeds[0])
    if src.encoding is not None:
        write_json(run_dir / "encoding.json", src.encoding)
    agg = seed_sweep(partial(train_one_seed, cfg, run_dir, init_path), list(cfg.seeds), args.jobs)
    usage = {s: msg for s, msg in agg.failures.items() if msg.startswith("UsageError")}
    if usage and len(usage) == len(cfg.seeds):
        raise UsageError(next(iter(usage.values())).split(": ", 1)[1])
    seeds = {str(s): {**rep["artifacts"], "lineage": rep["lineage"]} for s, rep in agg.per_seed.items()}
    per_seed = {s: {k: v for k, v in rep.items() if k not in ("artifacts", "lineage")}
                for s, rep in agg.per_seed.items()}
    aggregate = replace(agg, per_seed=per_seed).to_dict()
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "command": "train",
        "config": cfg.to_dict(),
        "label": cfg.label or cfg.algorithm,
        "algorithm": cfg.algorithm,
        "seeds": seeds,
        "aggregate": aggregate,
        "lineage": {"init_from": cfg.init_from,
                    "checkpoints": {s: v["lineage"] for s, v in seeds.items()}} if init_path else None,
        "wall_clock": {"started_unix": round(started, 3), "seconds": round(time.time() - started, 3)},
    }
    write_json(run_dir / MANIFEST, manifest)
    for s, msg in sorted(agg.failures.items()):
        print(f"seed {s} failed: {msg}", file=sys.stderr)
    print(f"{cfg.algorithm}: overall {agg.overall_mean:.3f} +/- {agg.overall_std:.3f}, "
          f"min/max {agg.min_max_mean:.3f} +/- {agg.min_max_std:.3f} "
          f"({agg.n_success}/{len(cfg.seeds)} seeds) -> {run_dir}")
    return 1 if agg.failures else 0


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def _svg(curves: dict, path: Path) -> None:
    """Minimal line plot of ROC curves: axes, diagonal, one polyline per curve."""
    size, pad = 400, 40
    span = size - 2 * pad
    colors = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"]

    def xy(f, t):
        return f"{pad + f * span:.2f},{size - pad - t * span:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#888"/>',
             f'<polyline points="{xy(0, 0)} {xy(1, 1)}" fill="none" stroke="#ccc" stroke-dasharray="4"/>',
             f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">FPR</text>',
             f'<text x="12" y="{size / 2}" font-size="12" transform="rotate(-90 12 {size / 2})">TPR</text>']
    for k, (name, roc) in enumerate(curves.items()):
        pts = " ".join(xy(f, t) for f, t in zip(roc.fpr, roc.tpr))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colors[k % 6]}" stroke-width="1.5"/>')
        parts.append(f'<text x="{pad + span - 110}" y="{pad + span - 90 + 14 * k}" font-size="11" '
                     f'fill="{colors[k % 6]}">{name} {roc.area():.3f}</text>')
    parts.append("</svg>")
    write_text_atomic(path, "\n".join(parts) + "\n")


def evaluate_scores(scores, ds, out: Path, tie_policy: str = "half", svg: bool = False, extra=None) -> dict:
    """Write report.json and the six ROC CSVs for ``scores`` on ``ds``."""
    report = metrics_report(scores, ds, tie_policy)
    pos = scores[ds.labels == 1]
    neg = scores[ds.labels == -1]
    curves = {"overall": roc_curve(pos, neg)}
    for z, zp in PAIRS:
        curves[z + zp] = roc_curve(scores[ds.strata[(z, 1)]], scores[ds.strata[(zp, -1)]])
    curves["group_balanced"] = group_balanced_roc(scores, ds)
    # trapezoid areas count ties as 1/2, so check them against the half-policy AUCs
    g_half = group_aucs(scores, ds, "half")
    expected = {"overall": overall_auc(scores, ds, "half"), "group_balanced": float(g_half.mean())}
    expected.update({z + zp: v for (z, zp), v in zip(PAIRS, g_half)})
    for name, roc in curves.items():
        if abs(roc.area() - expected[name]) > ROC_CHECK_TOL:
            raise FairAucError(f"ROC area for {name} ({roc.area()!r}) disagrees with AUC {expected[name]!r}")
    doc = report.to_dict()
    doc["roc_area"] = {name: roc.area() for name, roc in curves.items()}
    doc["n"] = ds.n
    if extra:
        doc.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", doc)
    for name, roc in curves.items():
        roc.to_csv(out / f"roc_{name}.csv")
    if svg:
        _svg(curves, out / "roc.svg")
    return doc


def cmd_evaluate(args) -> int:
    ck = Path(args.checkpoint)
    doc = _read_json(ck, "checkpoint")
    try:
        params, norm, meta = M.from_checkpoint(doc)
    except (ArgumentError, KeyError) as exc:
        raise UsageError(f"{ck}: not a valid checkpoint ({exc})") from None
    if (args.data is None) == (args.config is None):
        raise UsageError("give exactly one of --data or --config")
    if args.data is not None:
        ds = read_canonical_csv(args.data)
        if "preprocess" in meta:
            st = Standardizer.from_dict(meta["preprocess"])
            if ds.d != params.d:
                raise UsageError(f"checkpoint expects d={params.d} features, {args.data} has d={ds.d}")
            ds = st.transform(ds)
        source = {"data": str(args.data)}
    else:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else meta.get("seed", cfg.seeds[0])
        splits = prepare(cfg, seed)
        ds = splits.test if args.split == "test" else splits.val
        source = {"config": str(args.config), "seed": seed, "split": args.split}
    if ds.d != params.d:
        raise UsageError(f"checkpoint expects d={params.d} features, data has d={ds.d}")
    scores = M.forward(params, norm, ds.features, mode="eval")
    rep = evaluate_scores(scores, ds, Path(args.out), args.tie_policy, args.svg,
                          {"source": source, "checkpoint": {"path": str(ck), "sha256": _sha256(ck)}})
    g = rep["group_aucs"]
    print(f"overall {rep['overall_auc']:.4f}  min/max {rep['min_max_ratio']:.4f}  "
          + "  ".join(f"{k} {v:.4f}" for k, v in g.items()))
    return 0


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------


def compare_rows(run_dirs) -> list:
    rows = []
    for d in run_dirs:
        path = Path(d) / MANIFEST
        if not path.exists():
            raise UsageError(f"{d}: no {MANIFEST} found")
        man = _read_json(path, "manifest")
        agg = man["aggregate"]
        rows.append({
            "run": str(d),
            "label": man.get("label") or man.get("algorithm"),
            "algorithm": man.get("algorithm"),
            "seeds": agg["n_success"],
            "overall_mean": agg["overall"]["mean"],
            "overall_std": agg["overall"]["std"],
            "min_max_mean": agg["min_max"]["mean"],
            "min_max_std": agg["min_max"]["std"],
        })
    return rows


def format_table(rows) -> str:
    """Aligned text table; the best mean in each metric column is wrapped in ``**``."""
    cells = {}
    for col in ("overall", "min_max"):
        means = [r[f"{col}_mean"] for r in rows]
        best = max(means)
        for i, r in enumerate(rows):
            text = f"{r[f'{col}_mean']:.3f} ± {r[f'{col}_std']:.3f}"
            cells[i, col] = f"**{text}**" if means[i] == best else text
    header = ["run", "algorithm", "seeds", "Overall", "Min/Max"]
    body = [[r["label"], r["algorithm"], str(r["seeds"]), cells[i, "overall"], cells[i, "min_max"]]
            for i, r in enumerate(rows)]
    widths = [max(len(line[k]) for line in [header] + body) for k in range(len(header))]
    fmt = lambda line: "  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip()
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(line) for line in body]
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise UsageError("compare needs at least two run directories")
    rows = compare_rows(args.runs)
    out = Path(args.out)
    header = ["label", "algorithm", "seeds", "overall_mean", "overall_std", "min_max_mean", "min_max_std", "run"]
    write_csv_rows(out / "compare.csv", header, [[r[h] for h in header] for r in rows])
    text = format_table(rows)
    write_text_atomic(out / "compare.txt", text)
    print(text, end="")
    return 0


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


def grid_points(grid) -> list:
    if not grid:
        raise UsageError("grid: need at least one field with a nonempty list of values")
    keys = sorted(grid)
    for k in keys:
        if k not in TrainerConfig.__dataclass_fields__:
            raise UsageError(f"grid.{k}: not a trainer field")
        if not isinstance(grid[k], list) or not grid[k]:
            raise UsageError(f"grid.{k}: need a nonempty list of values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def sweep_point(cfg: RunConfig, init_path, point: dict) -> dict:
    """Validation metrics for one grid point, averaged over the config's seeds."""
    try:
        trainer = TrainerConfig.from_dict({**cfg.trainer.to_dict(), **point}).validate()
    except ArgumentError as exc:
        raise UsageError(f"grid: {exc}") from None
    local = replace(cfg, trainer=trainer)
    vals = []
    for seed in cfg.seeds:
        model0 = None
        if init_path is not None:
            params, norm, _ = resolve_init(init_path, seed)
            model0 = (params, norm)
        rep = run_seed(local, seed, model0).val_report
        vals.append((rep.overall_auc, float(np.min(rep.group_aucs)), rep.min_max))
    v = np.array(vals)
    return {"val_overall": float(v[:, 0].mean()), "val_min_group": float(v[:, 1].mean()),
            "val_min_max": float(v[:, 2].mean())}


def rank_points(algorithm: str, results: list, overall_slack: float = 0.02) -> list:
    """Order grid points by the per-algorithm selection rule (best first).

    minimax maximizes validation min group AUC; aucmax maximizes validation
    overall AUC; equalauc maximizes validation min/max among points whose
    overall AUC is within ``overall_slack`` of the best.
    """
    best_overall = max(r["val_overall"] for r in results)
    for i, r in enumerate(results):
        r["index"] = i
        if algorithm == "minimax":
            r["eligible"], r["score"] = True, r["val_min_group"]
        elif algorithm == "aucmax":
            r["eligible"], r["score"] = True, r["val_overall"]
        else:
            r["eligible"] = r["val_overall"] >= best_overall - overall_slack
            r["score"] = r["val_min_max"]
    # ties keep grid order
    ranked = sorted(results, key=lambda r: (not r["eligible"], -r["score"], r["index"]))
    for k, r in enumerate(ranked, 1):
        r["rank"] = k
    return ranked


def cmd_sweep(args) -> int:
    cfg, out, init_path = _config_from_args(args)
    points = grid_points(cfg.grid)
    run = partial(sweep_point, cfg, init_path)
    if args.jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            metrics = list(pool.map(run, points))
    else:
        metrics = [run(p) for p in points]
    results = [{"params": p, **m} for p, m in zip(points, metrics)]
    ranked = rank_points(cfg.algorithm, results)
    keys = sorted(points[0])
    header = ["rank"] + keys + ["val_overall", "val_min_group", "val_min_max", "eligible", "score"]
    rows = [[r["rank"], *[r["params"][k] for k in keys], r["val_overall"], r["val_min_group"],
             r["val_min_max"], str(r["eligible"]).lower(), r["score"]] for r in ranked]
    write_csv_rows(out / "sweep.csv", header, rows)
    best = replace(cfg, trainer=TrainerConfig.from_dict({**cfg.trainer.to_dict(), **ranked[0]["params"]}),
                   grid=None).to_dict()
    # best_config.json lives in a different directory, so pin its paths
    best["output_dir"] = str((out / "best").resolve())
    best["init_from"] = str(init_path.resolve()) if init_path is not None else None
    if "csv" in best["dataset"]:
        best["dataset"]["csv"]["path"] = str(cfg.resolve(best["dataset"]["csv"]["path"]).resolve())
    write_json(out / "best_config.json", best)
    write_json(out / MANIFEST, {
        "format": MANIFEST_FORMAT, "version": __version__, "command": "sweep",
        "config": cfg.to_dict(), "algorithm": cfg.algorithm, "points": len(points),
        "best": ranked[0]["params"], "selection": "see sweep.csv; rank 1 is selected",
    })
    print(f"best of {len(points)}: {json.dumps(ranked[0]['params'], sort_keys=True)} -> {out}")
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairauc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fairauc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    s.add_argument("name", help="gaussian2d_paper, scores_fig1 or custom")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out", required=True, help="output CSV path")
    s.add_argument("--count", type=int, help="rows per cell for gaussian2d_paper")
    s.add_argument("--kind", choices=("gaussian2d", "scores"), default="gaussian2d", help="custom spec kind")
    s.add_argument("--counts", help="custom: rows per cell, a-,a+,b-,b+")
    s.add_argument("--means", help="custom: per-cell means; 'x,y;x,y;x,y;x,y' or 'm,m,m,m' for scores")
    s.add_argument("--variances", help="custom: per-cell variances, a-,a+,b-,b+")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train every seed of a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, help="run only this seed")
    t.add_argument("-o", "--out", help="run directory (overrides output_dir)")
    t.add_argument("--init-from", help="warm start from a run directory or checkpoint file")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics report and ROC data for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="canonical CSV (x0..,label,group) with raw features")
    e.add_argument("--config", help="rebuild the split from a run config instead of --data")
    e.add_argument("--seed", type=int, help="split seed with --config (default: the checkpoint's)")
    e.add_argument("--split", choices=("test", "val"), default="test")
    e.add_argument("--tie-policy", choices=("half", "strict"), default="half")
    e.add_argument("-o", "--out", required=True, help="output directory")
    e.add_argument("--svg", action="store_true", help="also render roc.svg")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="table of several runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("-o", "--out", required=True, help="output directory")
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="grid search over trainer fields")
    w.add_argument("--config", required=True)
    w.add_argument("--seed", type=int, help="use only this seed")
    w.add_argument("-o", "--out")
    w.add_argument("--init-from")
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    level = os.environ.get("FAIRAUC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("fairauc: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fairauc: error: {exc}", file=sys.stderr)
        return 2
    except (FairAucError, ValueError, OSError) as exc:
        print(f"fairauc: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
