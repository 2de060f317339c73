"""Command-line entry point: ``oclkit <subcommand> [options]``.

Exit status is 0 on success, 2 for configuration problems and 1 for any
other failure; errors print as ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import geocells
from .config import ExperimentConfig, load_config, parse_value
from .errors import ComparisonError, ConfigError, OclError
from .harness import evaluate_checkpoint, prepare_data, read_summary, run
from .metrics import write_transfer_csv
from .stream import write_stream

AXIS_ALIASES = {"B": "batch_size", "R": "buffer_size", "lr": "lr"}


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.validate()


def cmd_gen_stream(args) -> int:
    cfg = _load(args)
    out = _out_dir(args.out)
    spec, train, validation = prepare_data(cfg)
    with open(out / "stream.txt", "w") as fh:
        write_stream(train, fh)
    with open(out / "validation.txt", "w") as fh:
        write_stream(validation.stream, fh)
    print(f"wrote {len(train)} training and {len(validation)} validation examples to {out} "
          f"(fingerprint {spec.fingerprint()})")
    return 0


def cmd_build_cells(args) -> int:
    if args.points:
        pts = np.loadtxt(args.points, delimiter=",", ndmin=2, skiprows=1 if _has_header(args.points) else 0)
    else:
        seed = 0 if args.seed is None else args.seed
        pts = geocells.clustered_points(args.n_points, args.clusters, args.spread, seed=seed)
    tree = geocells.build_cells(pts, args.min_count, args.max_count, args.max_depth)
    out = _out_dir(args.out)
    (out / "cells.csv").write_text(tree.to_text())
    knots, fractions = geocells.distance_cdf(pts, tree)
    with open(out / "cdf.csv", "w") as fh:
        geocells.write_cdf(knots, fractions, fh)
    if args.plot:
        from .plots import plot_cdf
        plot_cdf(out / "cdf.csv")
    median = float(knots[np.searchsorted(fractions, 0.5)])
    print(f"{tree.num_cells} cells from {len(pts)} points; median distance to center {median:.1f} km")
    return 0


def _has_header(path) -> bool:
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        return False
    except ValueError:
        return True


def _report(result, out) -> None:
    s = result.summary
    print(f"acc_O = {s['acc_O']:.4f} over {s['steps']} steps ({s['sgd_steps']} SGD steps) -> {out}")
    for label, (T, _) in result.checkpoints.items():
        back = next(r for r in result.transfers[label] if r.direction == "backward")
        full = back.accuracies[-1]
        print(f"  checkpoint T{label} (T={T}): backward@full-window = "
              f"{'nan' if full is None else format(full, '.4f')}")


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args.out)
    result = run(cfg, out_dir=out)
    if args.plot:
        from .plots import plot_run
        plot_run(out)
    _report(result, out)
    return 0


def cmd_eval_transfer(args) -> int:
    cfg = _load(args)
    _, train, validation = prepare_data(cfg)
    text = Path(args.checkpoint).read_text()
    T = args.T if args.T is not None else train.horizon
    reports = evaluate_checkpoint(text, validation, T, train.horizon, cfg.transfer_windows)
    out = _out_dir(args.out)
    path = out / f"transfer_eval_T{T}.csv"
    with open(path, "w") as fh:
        write_transfer_csv(reports, fh)
    print(f"wrote {path}")
    return 0


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def compare_runs(run_dirs, out) -> Path:
    """Merge several runs' online accuracy into one wide CSV keyed by step (or examples seen)."""
    if len(run_dirs) < 2:
        raise ComparisonError("compare needs at least two run directories")
    names, summaries, metrics = [], [], []
    for d in run_dirs:
        d = Path(d)
        if not (d / "summary.txt").exists():
            raise ComparisonError(f"{d} is not a completed run directory")
        name = d.name or str(d)
        while name in names:
            name += "#2"
        names.append(name)
        summaries.append(read_summary(d))
        metrics.append(_read_csv(d / "metrics.csv"))
    ref = summaries[0]
    for name, s in zip(names, summaries):
        if s.get("status") != "complete":
            raise ComparisonError(f"{name} did not complete")
        for key in ("stream_fingerprint", "horizon", "train_examples"):
            if s.get(key) != ref.get(key):
                raise ComparisonError(f"{name}: {key} {s.get(key)} differs from {ref.get(key)} in {names[0]}")

    out = _out_dir(out)
    path = out / "compare.csv"
    steps = {len(m) for m in metrics}
    with open(path, "w") as fh:
        if len(steps) == 1 and len({s["batch_size"] for s in summaries}) == 1:
            fh.write(",".join(["step"] + names) + "\n")
            for i in range(len(metrics[0])):
                fh.write(",".join([metrics[0][i]["step"]] + [m[i]["acc_O"] for m in metrics]) + "\n")
        else:
            # different batch sizes: align on examples served, using the coarsest run's grid
            n = int(ref["train_examples"])
            served = [[min(int(r["step"]) * int(s["batch_size"]), n) for r in m] for m, s in zip(metrics, summaries)]
            coarse = min(range(len(metrics)), key=lambda k: len(metrics[k]))
            fh.write(",".join(["examples"] + names) + "\n")
            for x in served[coarse]:
                row = [str(x)]
                for m, sv in zip(metrics, served):
                    i = int(np.searchsorted(sv, x, side="right")) - 1
                    row.append(m[i]["acc_O"] if i >= 0 else "nan")
                fh.write(",".join(row) + "\n")

    tables = []
    for d in run_dirs:
        per = {}
        for p in sorted(Path(d).glob("transfer_T*.csv")):
            for r in _read_csv(p):
                per[(r["T"], r["direction"], r["window"])] = r["accuracy"]
        tables.append(per)
    keys = sorted(set().union(*tables), key=lambda k: (int(k[0]), k[1], int(k[2])))
    with open(out / "transfer_compare.csv", "w") as fh:
        fh.write(",".join(["T", "direction", "window"] + names) + "\n")
        for k in keys:
            fh.write(",".join(list(k) + [t.get(k, "nan") for t in tables]) + "\n")
    return path


def cmd_compare(args) -> int:
    path = compare_runs(args.runs, args.out)
    if args.plot:
        from .plots import plot_compare
        plot_compare(path)
    print(f"wrote {path}")
    return 0


def parse_axis(spec: str):
    if "=" not in spec:
        raise ConfigError(f"--axis: expected NAME=V1,V2,..., got {spec!r}")
    name, raw = spec.split("=", 1)
    key = AXIS_ALIASES.get(name.strip(), name.strip())
    if key not in ExperimentConfig.__dataclass_fields__:
        raise ConfigError(f"{key}: unknown axis name")
    if key in ("checkpoints", "album_sizes"):
        raise ConfigError(f"{key}: list-valued keys cannot be an ablation axis")
    values = [parse_value(key, v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"{key}: axis has no values")
    return key, values


def cmd_ablation(args) -> int:
    base = _load(args)
    key, values = parse_axis(args.axis)
    if key in _STREAM_KEYS:
        raise ConfigError(f"{key}: stream keys cannot vary within an ablation (arms share one stream)")
    out = _out_dir(args.out)
    data = prepare_data(base)
    dirs = []
    for v in values:
        cfg = base.replace(**{key: v}).validate()
        arm = out / f"{key}={v}"
        result = run(cfg, data=data, out_dir=arm)
        if args.plot:
            from .plots import plot_run
            plot_run(arm)
        print(f"[{key}={v}]", end=" ")
        _report(result, arm)
        dirs.append(arm)
    path = compare_runs(dirs, out)
    if args.plot:
        from .plots import plot_compare
        plot_compare(path)
    print(f"wrote {path}")
    return 0


_STREAM_KEYS = {"dim", "classes", "length", "segments", "noise", "drift", "separation", "prior_alpha",
                "album_sizes", "p_album", "geo", "holdout", "stream_seed", "seed"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oclkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="flat key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")

    p = sub.add_parser("gen-stream", help="materialize a stream and its validation split")
    common(p)
    p.set_defaults(func=cmd_gen_stream)

    p = sub.add_parser("build-cells", help="partition geotagged points into classification cells")
    p.add_argument("--points", help="CSV of lat,lon rows (synthetic clustered points if omitted)")
    p.add_argument("--n-points", type=int, default=10_000)
    p.add_argument("--clusters", type=int, default=20)
    p.add_argument("--spread", type=float, default=2.0, help="cluster spread in degrees")
    p.add_argument("--min-count", type=int, default=50)
    p.add_argument("--max-count", type=int, default=500)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plot", action="store_true", help="also render cdf.png")
    p.set_defaults(func=cmd_build_cells)

    p = sub.add_parser("run", help="run one experiment")
    common(p, config_required=True)
    p.add_argument("--plot", action="store_true", help="render PNG figures next to the CSVs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval-transfer", help="score a checkpoint file on the config's validation set")
    common(p, config_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--T", type=int, default=None, help="checkpoint time (default: stream horizon)")
    p.set_defaults(func=cmd_eval_transfer)

    p = sub.add_parser("compare", help="merge completed runs into comparison tables")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablation", help="one run per axis value on a shared stream, then compare")
    common(p, config_required=True)
    p.add_argument("--axis", required=True, help="NAME=V1,V2,... (B and R alias batch_size and buffer_size)")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except OclError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
