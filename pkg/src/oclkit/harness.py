"""The test-then-train loop.

Each step serves ``batch_size`` stream examples, scores the current model on
the batch's first album before anything trains on it, pushes the batch into
the replay buffer, then takes ``gd_steps`` SGD steps on the stream batch joined
with replay samples. Checkpoints are taken at configured fractions of the
stream horizon and scored for backward/forward transfer on held-out data.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import ExperimentConfig
from .errors import NumericalError
from .learner import BlindClassifier, Learner
from .metrics import (MetricsLedger, TransferReport, backward_transfer, default_windows, forward_transfer,
                      format_value, write_transfer_csv)
from .replay import AdRepState, ReplayBuffer
from .schedule import ConstantSchedule, CosineSchedule, Polrs
from .stream import Stream, StreamReader, ValidationSet, holdout_split, materialize

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "acc_O", "acc_Stream", "acc_Rep", "lr", "R", "batch_loss")
SCHEDULE_COLUMNS = ("t", "lr", "member_id", "j_star")

# seed tags for per-component generators
_REPLAY_TAG, _SAMPLE_TAG, _HOLDOUT_TAG = 11, 12, 13


def frac_label(f) -> str:
    return format(float(f), ".4g")


@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: List[tuple] = field(default_factory=list)
    schedule: List[tuple] = field(default_factory=list)
    checkpoints: Dict[str, tuple] = field(default_factory=dict)  # label -> (T, checkpoint text)
    transfers: Dict[str, List[TransferReport]] = field(default_factory=dict)
    summary: Dict[str, object] = field(default_factory=dict)
    capacity_trace: List[tuple] = field(default_factory=list)  # (step, R) at each ADRep decision
    ledger: Optional[MetricsLedger] = None
    final_model: Optional[Learner] = None

    @property
    def acc_online(self) -> float:
        return float(self.summary["acc_O"])

    def backward_at(self, label: str = "1") -> TransferReport:
        return next(r for r in self.transfers[label] if r.direction == "backward")


def prepare_data(config: ExperimentConfig):
    """Materialize the configured stream and split off the validation set."""
    spec = config.stream_spec()
    stream = materialize(spec)
    train, validation = holdout_split(stream, config.holdout, seed=config.effective_stream_seed + _HOLDOUT_TAG)
    return spec, train, validation


def evaluate_checkpoint(checkpoint, validation: ValidationSet, T: int, horizon: int,
                        n_windows: int = 10) -> List[TransferReport]:
    """Backward and (unless ``T >= horizon``) forward transfer of a frozen checkpoint."""
    model = checkpoint if isinstance(checkpoint, Learner) else Learner.from_text(checkpoint)
    reports = [backward_transfer(model, validation, T, default_windows(T, n_windows))]
    if T < horizon:
        reports.append(forward_transfer(model, validation, T, default_windows(horizon - T, n_windows)))
    return reports


def _checkpoint_targets(config: ExperimentConfig, horizon: int) -> List[tuple]:
    targets = sorted({(max(1, math.ceil(f * horizon)), frac_label(f)) for f in config.checkpoints})
    return targets


class _Audit:
    """Asserts that no example is trained on before its step's online test is logged."""

    def __init__(self):
        self.tested_through = -1

    def tested(self, batch_stop: int) -> None:
        self.tested_through = batch_stop

    def check(self, stream_stop: int, replay_idx) -> None:
        if stream_stop > self.tested_through:
            raise AssertionError("training on stream examples before their online test")
        if len(replay_idx) and max(replay_idx) >= self.tested_through:
            raise AssertionError("replay holds examples that were never tested")


def run(config: ExperimentConfig, data=None, out_dir=None) -> RunResult:
    """Play the online game for one configuration.

    ``data`` may be a pre-built ``(spec, train, validation)`` triple so several
    arms can share one materialized stream.
    """
    config.validate()
    if config.model == "blind":
        return run_blind_baseline(config, data, out_dir)
    spec, train, validation = data if data is not None else prepare_data(config)
    result = RunResult(config)
    try:
        _play(config, spec, train, validation, result)
    except NumericalError:
        if out_dir is not None:
            write_run(result, out_dir, partial=True)
        raise
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def _play(config: ExperimentConfig, spec, train: Stream, validation: ValidationSet, result: RunResult) -> None:
    N, B, G = len(train), config.batch_size, config.gd_steps
    n_steps = math.ceil(N / B)
    horizon = train.horizon
    template = Learner(train.dim, train.num_classes, config.arch, config.hidden, config.weight_decay,
                       seed=config.effective_init_seed)
    polrs = None
    if config.schedule == "polrs":
        interval = config.polrs_interval or max(1, n_steps // 20)
        polrs = Polrs(template, config.lr, interval)
        schedule = None
    elif config.schedule == "cosine":
        schedule = CosineSchedule(config.lr, n_steps)
    else:
        schedule = ConstantSchedule(config.lr)
    learner = template

    buffer = None
    adrep = None
    if config.replay != "off":
        buffer = ReplayBuffer(config.buffer_size, config.replay, seed=config.rng(_REPLAY_TAG))
        if config.adrep:
            adrep = AdRepState(
                interval=config.adrep_interval or max(1, n_steps // 20),
                eps=config.adrep_eps,
                r_min=config.adrep_min,
                r_max=config.adrep_max or N,
            )
            result.capacity_trace.append((0, buffer.capacity))
    sample_rng = random.Random(int(config.rng(_SAMPLE_TAG).integers(2**63)))
    pool = ThreadPoolExecutor(max_workers=3) if (polrs and config.parallel_members) else None
    audit = _Audit() if config.audit else None

    ledger = MetricsLedger()
    result.ledger = ledger
    targets = _checkpoint_targets(config, horizon)
    features, labels = train.features, train.labels
    reader = StreamReader(train)
    sgd_steps = 0

    try:
        for t in range(1, n_steps + 1):
            batch = reader.next_batch(B)
            Xb, yb = batch.X, batch.y
            nb = len(batch)
            n_eval = nb if config.eval_all_albums else batch.first_album_size
            model = polrs.best_member if polrs else learner
            _, pred = model.predict(Xb[:n_eval])
            ledger.update_online(int(np.count_nonzero(pred == yb[:n_eval])), n_eval)
            if audit:
                audit.tested(batch.stop)

            if buffer is not None:
                buffer.extend(range(batch.start, batch.stop))
            scale = nb / config.b_ref if config.lr_scaling else 1.0
            n_rep = int(round(config.replay_ratio * nb))

            first = None
            for g in range(G):
                rep_idx = buffer.sample(n_rep, sample_rng) if buffer is not None else []
                if audit:
                    audit.check(batch.stop, rep_idx)
                if rep_idx:
                    X = np.concatenate([Xb, features[rep_idx]])
                    y = np.concatenate([yb, labels[rep_idx]])
                else:
                    X, y = Xb, yb
                if polrs:
                    steps = polrs.train_members(lambda j, m, lr: m.sgd_step(X, y, lr * scale), pool)
                    sgd_steps += 3
                else:
                    steps = [learner.sgd_step(X, y, schedule.lr_at(t - 1) * scale)]
                    sgd_steps += 1
                if g == 0:
                    first = (steps, len(rep_idx), y)

            steps, n_replayed, y_first = first
            accs = []
            for s in steps:
                p = s.predictions
                acc_s = int(np.count_nonzero(p[:nb] == yb)) / nb
                acc_r = int(np.count_nonzero(p[nb:] == y_first[nb:])) / n_replayed if n_replayed else None
                accs.append((acc_s, acc_r, s.loss))
            if polrs:
                reporter = polrs.best
                lrs = [lr * scale for lr in polrs.lrs]
                for j in range(3):
                    result.schedule.append((t, lrs[j], j, reporter))
                polrs.step([a[0] for a in accs])
                if polrs.due(t):
                    polrs.restructure()
            else:
                reporter = 0
                lrs = [schedule.lr_at(t - 1) * scale]
                result.schedule.append((t, lrs[0], 0, 0))
            acc_s, acc_r, loss = accs[reporter]
            ledger.update_training_accs(acc_s, acc_r)

            if adrep is not None and acc_r is not None:
                adrep.observe(acc_s, acc_r)
            if adrep is not None and t % adrep.interval == 0:
                new_r = adrep.decide(buffer.capacity)
                if new_r != buffer.capacity:
                    buffer.resize(new_r, (adrep.r_min, adrep.r_max))
                result.capacity_trace.append((t, buffer.capacity))

            result.metrics.append((t, ledger.acc_online, ledger.acc_stream, ledger.acc_rep, lrs[reporter],
                                   buffer.capacity if buffer is not None else 0, loss))

            served = int(batch.timestamps[-1]) + 1
            while targets and (targets[0][0] <= served or t == n_steps):
                T, label = targets.pop(0)
                ckpt_model = polrs.best_member if polrs else learner
                text = ckpt_model.to_text()
                result.checkpoints[label] = (T, text)
                result.transfers[label] = evaluate_checkpoint(
                    ckpt_model, validation, T, horizon, config.transfer_windows)
    except NumericalError as exc:
        raise NumericalError(f"step {t}: {exc}") from exc
    finally:
        if pool is not None:
            pool.shutdown()

    expected = G * n_steps * (3 if polrs else 1)
    assert sgd_steps == expected, (sgd_steps, expected)
    final = polrs.best_member if polrs else learner
    result.final_model = final
    back = result.transfers[frac_label(1)][0] if frac_label(1) in result.transfers else None
    result.summary = {
        "seed": config.seed,
        "stream_fingerprint": spec.fingerprint() if spec is not None else "none",
        "horizon": horizon,
        "train_examples": N,
        "validation_examples": len(validation),
        "batch_size": B,
        "steps": n_steps,
        "sgd_steps": sgd_steps,
        "sgd_steps_per_model": sgd_steps // (3 if polrs else 1),
        "acc_O": ledger.acc_online,
        "acc_Stream": ledger.acc_stream,
        "acc_Rep": ledger.acc_rep,
        "final_lr": result.metrics[-1][4],
        "final_R": result.metrics[-1][5],
        "audit": "pass" if audit else "off",
    }
    if polrs:
        result.summary["polrs_centers"] = polrs.centers
    if back is not None:
        result.summary["acc_B@H"] = list(zip(back.windows, back.accuracies))


def run_blind_baseline(config: ExperimentConfig, data=None, out_dir=None) -> RunResult:
    """Same loop with the label-history classifier as the model: no training, no replay."""
    spec, train, validation = data if data is not None else prepare_data(config)
    blind = BlindClassifier(config.blind_k)
    ledger = MetricsLedger()
    result = RunResult(config, ledger=ledger)
    t = 0
    for t, batch in enumerate(train.batches(config.batch_size), 1):
        yb = batch.y
        n_eval = len(batch) if config.eval_all_albums else batch.first_album_size
        guess = blind.predict()
        ledger.update_online(int(np.count_nonzero(yb[:n_eval] == guess)), n_eval)
        blind.update(yb)
        result.metrics.append((t, ledger.acc_online, None, None, 0.0, 0, None))
        result.schedule.append((t, 0.0, 0, 0))
    result.summary = {
        "seed": config.seed,
        "stream_fingerprint": spec.fingerprint() if spec is not None else "none",
        "horizon": train.horizon,
        "train_examples": len(train),
        "validation_examples": len(validation),
        "batch_size": config.batch_size,
        "steps": t,
        "sgd_steps": 0,
        "acc_O": ledger.acc_online,
        "model": "blind",
    }
    if out_dir is not None:
        write_run(result, out_dir)
    return result


def fit_offline(learner: Learner, X, y, epochs: int, batch_size: int, lr: float, seed=0) -> Learner:
    """Shuffled multi-epoch minibatch SGD, the supervised reference regime."""
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            learner.sgd_step(X[idx], y[idx], lr)
    return learner


def accuracy_by_period(model, validation, edges) -> List[Optional[float]]:
    """Validation accuracy within each ``[edges[i], edges[i+1])`` timestamp period."""
    val = getattr(validation, "stream", validation)
    _, pred = model.predict(val.features)
    hit = pred == val.labels
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (val.timestamps >= lo) & (val.timestamps < hi)
        out.append(float(hit[sel].mean()) if sel.any() else None)
    return out


# -- artifacts ---------------------------------------------------------------

def _write_rows(path: Path, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def write_run(result: RunResult, out_dir, partial: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "metrics.csv", METRIC_COLUMNS, result.metrics)
    _write_rows(out / "schedule.csv", SCHEDULE_COLUMNS, result.schedule)
    for label, (T, text) in result.checkpoints.items():
        (out / f"checkpoint_T{label}.txt").write_text(text)
    for label, reports in result.transfers.items():
        with open(out / f"transfer_T{label}.csv", "w") as fh:
            write_transfer_csv(reports, fh)
    if result.capacity_trace:
        _write_rows(out / "capacity.csv", ("step", "R"), result.capacity_trace)
    summary = dict(result.summary)
    summary["status"] = "partial" if partial else "complete"
    with open(out / "summary.txt", "w") as fh:
        for k, v in summary.items():
            if isinstance(v, (list, tuple)):
                v = json.dumps(v)
            fh.write(f"{k} = {format_value(v)}\n")
    (out / "config.txt").write_text(result.config.to_text())
    return out


def read_summary(run_dir) -> dict:
    out = {}
    for line in (Path(run_dir) / "summary.txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_metrics(run_dir) -> List[dict]:
    with open(Path(run_dir) / "metrics.csv") as fh:
        return list(csv.DictReader(fh))


__all__ = [
    "RunResult", "run", "run_blind_baseline", "evaluate_checkpoint", "prepare_data", "fit_offline",
    "accuracy_by_period", "write_run", "read_summary", "read_metrics", "frac_label",
]
