"""Online accuracy, training accuracies and checkpoint transfer curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError


def top1(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeError(f"prediction/label length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ShapeError("top1 needs at least one prediction")
    return int(np.count_nonzero(predictions == labels)) / predictions.size


@dataclass
class MetricsLedger:
    """Running online accuracy (example-weighted) and step-averaged training accuracies.

    Every update appends to ``log`` so any running value can be recomputed
    from scratch; running values are always ``sum / count`` over the log.
    """

    online_correct: int = 0
    online_count: int = 0
    stream_sum: float = 0.0
    stream_steps: int = 0
    replay_sum: float = 0.0
    replay_steps: int = 0
    log: List[dict] = field(default_factory=list)

    @property
    def acc_online(self) -> Optional[float]:
        return self.online_correct / self.online_count if self.online_count else None

    @property
    def acc_stream(self) -> Optional[float]:
        return self.stream_sum / self.stream_steps if self.stream_steps else None

    @property
    def acc_rep(self) -> Optional[float]:
        return self.replay_sum / self.replay_steps if self.replay_steps else None

    def update_online(self, correct: int, total: int) -> float:
        if not 0 <= correct <= total:
            raise ConfigError(f"need 0 <= correct <= total, got {correct}/{total}")
        self.online_correct += int(correct)
        self.online_count += int(total)
        self.log.append({"kind": "online", "correct": int(correct), "total": int(total)})
        return self.acc_online

    def update_training_accs(self, stream_frac: float, replay_frac: Optional[float] = None):
        if not 0.0 <= stream_frac <= 1.0 or (replay_frac is not None and not 0.0 <= replay_frac <= 1.0):
            raise ConfigError("training accuracies must lie in [0, 1]")
        self.stream_sum += stream_frac
        self.stream_steps += 1
        if replay_frac is not None:
            self.replay_sum += replay_frac
            self.replay_steps += 1
        self.log.append({"kind": "train", "stream": stream_frac, "replay": replay_frac})
        return self.acc_stream, self.acc_rep


def update_online(ledger: MetricsLedger, correct: int, total: int) -> float:
    return ledger.update_online(correct, total)


def update_training_accs(ledger: MetricsLedger, stream_frac: float, replay_frac: Optional[float] = None):
    return ledger.update_training_accs(stream_frac, replay_frac)


@dataclass
class TransferReport:
    T: int
    direction: str
    windows: List[int]
    accuracies: List[Optional[float]]  # None marks an empty window
    counts: List[int]

    @property
    def curve(self) -> list:
        return list(zip(self.windows, self.accuracies))

    def rows(self) -> list:
        return [(self.T, self.direction, w, a, n) for w, a, n in zip(self.windows, self.accuracies, self.counts)]


def default_windows(span: int, n: int = 10) -> List[int]:
    """Up to ``n`` log-spaced positive integer windows ending exactly at ``span``."""
    if span < 1:
        return []
    raw = np.geomspace(1, span, num=n) if span > 1 else np.array([1.0])
    return sorted({int(round(w)) for w in raw} | {span})


def _transfer(model, validation, T: int, windows: Sequence[int], direction: str) -> TransferReport:
    val = getattr(validation, "stream", validation)
    if len(val) == 0:
        raise ConfigError("transfer evaluation needs a non-empty validation set")
    windows = [int(w) for w in windows]
    if any(w < 1 for w in windows) or any(b <= a for a, b in zip(windows, windows[1:])):
        raise ConfigError(f"transfer windows must be positive and increasing: {windows}")
    ts = val.timestamps
    # one forward pass over every validation example that any window can reach
    if direction == "backward":
        reach = (ts >= T - max(windows, default=0)) & (ts <= T)
    else:
        reach = (ts > T) & (ts <= T + max(windows, default=0))
    idx = np.flatnonzero(reach)
    correct = np.zeros(len(ts), dtype=bool)
    if idx.size:
        _, pred = model.predict(val.features[idx])
        correct[idx] = pred == val.labels[idx]
    accs, counts = [], []
    for w in windows:
        if direction == "backward":
            sel = (ts >= T - w) & (ts <= T)
        else:
            sel = (ts > T) & (ts <= T + w)
        n = int(np.count_nonzero(sel))
        counts.append(n)
        accs.append(int(np.count_nonzero(correct[sel])) / n if n else None)
    return TransferReport(T, direction, windows, accs, counts)


def backward_transfer(model, validation, T: int, windows: Sequence[int]) -> TransferReport:
    """Accuracy of a frozen model on validation timestamps in ``[T - w, T]`` per window ``w``."""
    return _transfer(model, validation, T, windows, "backward")


def forward_transfer(model, validation, T: int, windows: Sequence[int]) -> TransferReport:
    """Accuracy on validation timestamps in ``(T, T + w]``; ``s = T`` belongs to backward."""
    return _transfer(model, validation, T, windows, "forward")


def format_value(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_transfer_csv(reports: Sequence[TransferReport], fh) -> None:
    fh.write("T,direction,window,accuracy,n_examples\n")
    for rep in reports:
        for row in rep.rows():
            fh.write(",".join(format_value(v) for v in row) + "\n")
