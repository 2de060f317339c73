"""Matplotlib renderings of run artifacts, written next to the CSVs they draw from."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return float("nan")


def _figure(width=6.0, height=None):
    height = height or width * 0.618
    fig, ax = plt.subplots(figsize=(width, height))
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_run(run_dir) -> list:
    """Online accuracy, learning rate and buffer size over steps, plus transfer curves."""
    run_dir = Path(run_dir)
    written = []
    rows = _read(run_dir / "metrics.csv")
    steps = [_num(r["step"]) for r in rows]

    fig, ax = _figure()
    ax.plot(steps, [_num(r["acc_O"]) for r in rows], label="acc_O")
    if any(r["acc_Stream"] != "nan" for r in rows):
        ax.plot(steps, [_num(r["acc_Stream"]) for r in rows], label="acc_Stream", alpha=0.7)
        ax.plot(steps, [_num(r["acc_Rep"]) for r in rows], label="acc_Rep", alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("accuracy")
    ax.legend()
    written.append(_save(fig, run_dir / "metrics.png"))

    sched = _read(run_dir / "schedule.csv")
    if sched:
        fig, ax = _figure()
        members = sorted({r["member_id"] for r in sched})
        for m in members:
            pts = [(_num(r["t"]), _num(r["lr"])) for r in sched if r["member_id"] == m]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"member {m}")
        ax.set_xlabel("step")
        ax.set_ylabel("learning rate")
        if len(members) > 1:
            ax.set_yscale("log")
            ax.legend()
        written.append(_save(fig, run_dir / "schedule.png"))

    if (run_dir / "capacity.csv").exists():
        cap = _read(run_dir / "capacity.csv")
        fig, ax = _figure()
        ax.step([_num(r["step"]) for r in cap], [_num(r["R"]) for r in cap], where="post")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("replay capacity R")
        written.append(_save(fig, run_dir / "capacity.png"))

    for path in sorted(run_dir.glob("transfer_T*.csv")):
        written.append(plot_transfer(path))
    return written


def plot_transfer(path) -> Path:
    path = Path(path)
    rows = _read(path)
    fig, ax = _figure()
    for direction in ("backward", "forward"):
        pts = [(_num(r["window"]), _num(r["accuracy"])) for r in rows if r["direction"] == direction]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=direction)
    ax.set_xscale("log")
    ax.set_xlabel("window (steps)")
    ax.set_ylabel("accuracy")
    ax.set_title(path.stem)
    ax.legend()
    return _save(fig, path.with_suffix(".png"))


def plot_compare(compare_csv) -> Path:
    compare_csv = Path(compare_csv)
    rows = _read(compare_csv)
    key = next(iter(rows[0])) if rows else "step"
    fig, ax = _figure()
    for name in list(rows[0])[1:] if rows else []:
        ax.plot([_num(r[key]) for r in rows], [_num(r[name]) for r in rows], label=name)
    ax.set_xlabel(key)
    ax.set_ylabel("average online accuracy")
    ax.legend(fontsize="small")
    return _save(fig, compare_csv.with_suffix(".png"))


def plot_cdf(cdf_csv) -> Path:
    cdf_csv = Path(cdf_csv)
    rows = _read(cdf_csv)
    fig, ax = _figure()
    ax.step([max(_num(r["distance_km"]), 1e-3) for r in rows], [_num(r["cumulative_fraction"]) for r in rows],
            where="post")
    ax.set_xscale("log")
    ax.set_xlabel("distance to class center (km)")
    ax.set_ylabel("fraction of points")
    return _save(fig, cdf_csv.with_suffix(".png"))
