"""Synthetic non-stationary labeled streams.

A :class:`StreamSpec` describes a piecewise-stationary Gaussian mixture over
``length`` time steps (one example per step). :func:`materialize` turns it into
an immutable :class:`Stream` of album-grouped examples, and
:class:`StreamReader` serves it in mini-batches.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError

# P(size=1), P(size=2), P(size=3); mean album size 1.157
DEFAULT_ALBUM_PROBS = (0.87, 0.103, 0.027)
DEFAULT_P_ALBUM = 0.9


@dataclass(frozen=True)
class Example:
    id: int
    timestamp: int
    features: np.ndarray
    label: int
    album_id: int
    geo: Optional[tuple] = None


@dataclass(frozen=True)
class Segment:
    """One stationary piece of the stream covering steps ``[start, end)``."""

    start: int
    end: int
    means: np.ndarray  # (num_classes, dim)
    priors: np.ndarray  # (num_classes,)
    noise: float


@dataclass(frozen=True)
class AlbumSizes:
    """Categorical distribution over album sizes ``1..len(probs)``."""

    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError(f"album size probabilities must be non-negative and sum to 1: {self.probs}")

    @classmethod
    def constant(cls, size: int) -> "AlbumSizes":
        probs = [0.0] * size
        probs[-1] = 1.0
        return cls(tuple(probs))

    @property
    def mean(self) -> float:
        return float(sum((i + 1) * p for i, p in enumerate(self.probs)))

    @property
    def variance(self) -> float:
        m = self.mean
        return float(sum((i + 1 - m) ** 2 * p for i, p in enumerate(self.probs)))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(n), side="right") + 1


@dataclass(frozen=True)
class StreamSpec:
    dim: int
    num_classes: int
    length: int
    segments: tuple
    album_sizes: AlbumSizes = field(default_factory=lambda: AlbumSizes(DEFAULT_ALBUM_PROBS))
    seed: int = 0
    p_album: float = DEFAULT_P_ALBUM
    geo_anchors: Optional[np.ndarray] = None  # (num_classes, 2) lat/lon per class
    geo_spread: float = 1.0

    def validate(self) -> None:
        if self.dim < 1 or self.num_classes < 1 or self.length < 1:
            raise ConfigError("dim, num_classes and length must be positive")
        if not 0.0 <= self.p_album <= 1.0:
            raise ConfigError(f"p_album must lie in [0, 1], got {self.p_album}")
        if not self.segments:
            raise ConfigError("stream spec needs at least one segment")
        expected = 0
        for seg in self.segments:
            if seg.start != expected:
                kind = "gap" if seg.start > expected else "overlap"
                raise ConfigError(f"segment {kind} at step {expected} (segment starts at {seg.start})")
            if seg.end <= seg.start:
                raise ConfigError(f"empty segment [{seg.start}, {seg.end})")
            if np.shape(seg.means) != (self.num_classes, self.dim):
                raise ConfigError(f"segment means must have shape ({self.num_classes}, {self.dim})")
            priors = np.asarray(seg.priors, dtype=float)
            if priors.shape != (self.num_classes,) or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
                raise ConfigError(f"segment priors must be non-negative and sum to 1 (segment at {seg.start})")
            if seg.noise < 0:
                raise ConfigError("segment noise must be >= 0")
            expected = seg.end
        if expected != self.length:
            raise ConfigError(f"segments cover [0, {expected}) but stream length is {self.length}")
        if self.geo_anchors is not None and np.shape(self.geo_anchors) != (self.num_classes, 2):
            raise ConfigError("geo_anchors must have shape (num_classes, 2)")

    def fingerprint(self) -> str:
        """Stable hash of everything that determines the materialized stream."""
        h = hashlib.sha256()
        h.update(f"{self.dim}|{self.num_classes}|{self.length}|{self.seed}|{self.p_album!r}|".encode())
        h.update(repr(tuple(float(p) for p in self.album_sizes.probs)).encode())
        for seg in self.segments:
            h.update(f"{seg.start}|{seg.end}|{seg.noise!r}|".encode())
            h.update(np.ascontiguousarray(seg.means, dtype=float).tobytes())
            h.update(np.ascontiguousarray(seg.priors, dtype=float).tobytes())
        if self.geo_anchors is not None:
            h.update(np.ascontiguousarray(self.geo_anchors, dtype=float).tobytes())
            h.update(repr(self.geo_spread).encode())
        return h.hexdigest()[:16]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Stream:
    """Immutable column store of examples in serve (timestamp) order."""

    def __init__(self, ids, timestamps, features, labels, album_ids, num_classes, horizon, geo=None):
        self.ids = _frozen(np.asarray(ids, dtype=np.int64))
        self.timestamps = _frozen(np.asarray(timestamps, dtype=np.int64))
        self.features = _frozen(np.asarray(features, dtype=np.float64))
        self.labels = _frozen(np.asarray(labels, dtype=np.int64))
        self.album_ids = _frozen(np.asarray(album_ids, dtype=np.int64))
        self.geo = None if geo is None else _frozen(np.asarray(geo, dtype=np.float64))
        self.num_classes = int(num_classes)
        self.horizon = int(horizon)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ConfigError("features must be an (n, dim) array")
        if not (len(self.timestamps) == len(self.labels) == len(self.album_ids) == n):
            raise ConfigError("stream columns have different lengths")
        if n and np.any(np.diff(self.timestamps) < 0):
            raise ConfigError("timestamps must be non-decreasing")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError("labels must lie in [0, num_classes)")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Example:
        geo = None if self.geo is None else (float(self.geo[i, 0]), float(self.geo[i, 1]))
        return Example(
            id=int(self.ids[i]),
            timestamp=int(self.timestamps[i]),
            features=self.features[i],
            label=int(self.labels[i]),
            album_id=int(self.album_ids[i]),
            geo=geo,
        )

    def __iter__(self) -> Iterator[Example]:
        return (self[i] for i in range(len(self)))

    def subset(self, indices) -> "Stream":
        idx = np.asarray(indices, dtype=np.int64)
        return Stream(
            self.ids[idx],
            self.timestamps[idx],
            self.features[idx],
            self.labels[idx],
            self.album_ids[idx],
            self.num_classes,
            self.horizon,
            None if self.geo is None else self.geo[idx],
        )

    def batches(self, batch_size: int) -> Iterator["Batch"]:
        reader = StreamReader(self)
        while True:
            batch = reader.next_batch(batch_size)
            if batch is None:
                return
            yield batch

    def to_text(self) -> str:
        buf = io.StringIO()
        write_stream(self, buf)
        return buf.getvalue()


@dataclass(frozen=True)
class ValidationSet:
    stream: Stream
    fraction: float

    @property
    def examples(self) -> list:
        return list(self.stream)

    def __len__(self) -> int:
        return len(self.stream)


@dataclass(frozen=True)
class Batch:
    """A contiguous slice ``[start, stop)`` of a stream."""

    stream: Stream
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start

    @property
    def X(self) -> np.ndarray:
        return self.stream.features[self.start:self.stop]

    @property
    def y(self) -> np.ndarray:
        return self.stream.labels[self.start:self.stop]

    @property
    def ids(self) -> np.ndarray:
        return self.stream.ids[self.start:self.stop]

    @property
    def timestamps(self) -> np.ndarray:
        return self.stream.timestamps[self.start:self.stop]

    @property
    def first_album_size(self) -> int:
        albums = self.stream.album_ids[self.start:self.stop]
        different = np.flatnonzero(albums != albums[0])
        return int(different[0]) if different.size else len(albums)

    @property
    def examples(self) -> list:
        return [self.stream[i] for i in range(self.start, self.stop)]


class StreamReader:
    """Serves a stream front to back; ``next_batch`` returns None once exhausted."""

    def __init__(self, stream: Stream):
        self.stream = stream
        self.position = 0

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.stream)

    def next_batch(self, batch_size: int) -> Optional[Batch]:
        if batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {batch_size}")
        if self.exhausted:
            return None
        stop = min(self.position + batch_size, len(self.stream))
        batch = Batch(self.stream, self.position, stop)
        self.position = stop
        return batch


def next_batch(reader: StreamReader, batch_size: int) -> Optional[Batch]:
    return reader.next_batch(batch_size)


def group_into_albums(n: int, album_sizes: AlbumSizes, rng: np.random.Generator) -> np.ndarray:
    """Album id per position: consecutive runs with lengths drawn from ``album_sizes``."""
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    # over-draw so one call almost always suffices
    expected = int(n / album_sizes.mean * 1.1) + 16
    sizes = album_sizes.draw(rng, expected)
    while sizes.sum() < n:
        sizes = np.concatenate([sizes, album_sizes.draw(rng, expected)])
    ends = np.cumsum(sizes)
    count = int(np.searchsorted(ends, n, side="left")) + 1
    return np.repeat(np.arange(count, dtype=np.int64), sizes[:count])[:n]


def coherent_labels(
    album_ids: np.ndarray, fresh: np.ndarray, p_album: float, rng: np.random.Generator
) -> np.ndarray:
    """Each album copies its first label to the rest with probability ``p_album`` per example."""
    n = len(album_ids)
    is_head = np.ones(n, dtype=bool)
    is_head[1:] = album_ids[1:] != album_ids[:-1]
    head_pos = np.flatnonzero(is_head)
    album_label = fresh[head_pos][np.cumsum(is_head) - 1]
    keep = rng.random(n) < p_album
    return np.where(is_head | ~keep, fresh, album_label)


def materialize(spec: StreamSpec) -> Stream:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    H, C = spec.length, spec.num_classes
    timestamps = np.arange(H, dtype=np.int64)
    album_ids = group_into_albums(H, spec.album_sizes, rng)

    starts = np.array([s.start for s in spec.segments])
    seg_of = np.searchsorted(starts, timestamps, side="right") - 1
    u = rng.random(H)
    fresh = np.empty(H, dtype=np.int64)
    for k, seg in enumerate(spec.segments):
        mask = seg_of == k
        cdf = np.cumsum(seg.priors)
        cdf[-1] = 1.0
        fresh[mask] = np.minimum(np.searchsorted(cdf, u[mask], side="right"), C - 1)
    labels = coherent_labels(album_ids, fresh, spec.p_album, rng)

    means = np.stack([np.asarray(s.means, dtype=float) for s in spec.segments])
    noise = np.array([s.noise for s in spec.segments], dtype=float)
    eps = rng.standard_normal((H, spec.dim))
    features = means[seg_of, labels] + noise[seg_of, None] * eps

    geo = None
    if spec.geo_anchors is not None:
        anchors = np.asarray(spec.geo_anchors, dtype=float)
        geo = anchors[labels] + spec.geo_spread * rng.standard_normal((H, 2))
        geo[:, 0] = np.clip(geo[:, 0], -90.0, 90.0)
        geo[:, 1] = (geo[:, 1] + 180.0) % 360.0 - 180.0

    return Stream(timestamps.copy(), timestamps, features, labels, album_ids, C, H, geo)


def holdout_split(stream: Stream, fraction: float, seed: int):
    """Move ``floor(fraction * N)`` uniformly chosen examples into a validation set."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must lie in (0, 1), got {fraction}")
    n = len(stream)
    k = int(math.floor(fraction * n))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    train = stream.subset(np.flatnonzero(~mask))
    return train, ValidationSet(stream.subset(chosen), fraction)


def drifting_spec(
    dim: int = 16,
    num_classes: int = 10,
    length: int = 10_000,
    segments: int = 5,
    noise: float = 1.0,
    drift: float = 0.5,
    separation: float = 3.0,
    prior_alpha: float = 0.0,
    album_sizes: Optional[AlbumSizes] = None,
    p_album: float = DEFAULT_P_ALBUM,
    seed: int = 0,
    geo: bool = False,
    geo_spread: float = 1.0,
) -> StreamSpec:
    """Build a spec whose class means random-walk across equal-length segments.

    ``drift`` in [0, 1] is the weight of fresh randomness at each segment boundary:
    0 keeps the means fixed, 1 redraws them independently. ``prior_alpha`` > 0
    draws per-segment class priors from a symmetric Dirichlet; 0 means uniform.
    """
    if segments < 1 or segments > length:
        raise ConfigError("segments must lie in [1, length]")
    if not 0.0 <= drift <= 1.0:
        raise ConfigError(f"drift must lie in [0, 1], got {drift}")
    rng = np.random.default_rng([seed, 0x5EED])
    bounds = np.linspace(0, length, segments + 1).round().astype(int)
    scale = separation / math.sqrt(dim)
    means = scale * rng.standard_normal((num_classes, dim))
    keep = math.sqrt(1.0 - drift * drift)
    segs = []
    for k in range(segments):
        if k:
            means = keep * means + drift * scale * rng.standard_normal((num_classes, dim))
        if prior_alpha > 0:
            priors = rng.dirichlet(np.full(num_classes, prior_alpha))
        else:
            priors = np.full(num_classes, 1.0 / num_classes)
        segs.append(Segment(int(bounds[k]), int(bounds[k + 1]), means.copy(), priors, float(noise)))
    anchors = None
    if geo:
        anchors = np.column_stack([rng.uniform(-60, 70, num_classes), rng.uniform(-180, 180, num_classes)])
    return StreamSpec(
        dim=dim,
        num_classes=num_classes,
        length=length,
        segments=tuple(segs),
        album_sizes=album_sizes or AlbumSizes(DEFAULT_ALBUM_PROBS),
        seed=seed,
        p_album=p_album,
        geo_anchors=anchors,
        geo_spread=geo_spread,
    )


# -- serialization -----------------------------------------------------------

STREAM_MAGIC = "# oclkit-stream v1"


def write_stream(stream: Stream, fh) -> None:
    """Columnar text: magic line, header line, column names, one row per example."""
    has_geo = stream.geo is not None
    fh.write(f"{STREAM_MAGIC}\n")
    fh.write(f"dim={stream.dim} classes={stream.num_classes} horizon={stream.horizon} geo={int(has_geo)}\n")
    cols = ["id", "timestamp", "album_id", "label"] + [f"f{j}" for j in range(stream.dim)]
    if has_geo:
        cols += ["lat", "lon"]
    fh.write(",".join(cols) + "\n")
    for i in range(len(stream)):
        row = [str(int(stream.ids[i])), str(int(stream.timestamps[i])), str(int(stream.album_ids[i])),
               str(int(stream.labels[i]))]
        row += [format(float(v), ".17g") for v in stream.features[i]]
        if has_geo:
            row += [format(float(v), ".17g") for v in stream.geo[i]]
        fh.write(",".join(row) + "\n")


def read_stream(fh) -> Stream:
    magic = fh.readline().rstrip("\n")
    if magic != STREAM_MAGIC:
        raise ConfigError(f"not an oclkit stream file (first line {magic!r})")
    header = dict(item.split("=", 1) for item in fh.readline().split())
    dim, classes, horizon = int(header["dim"]), int(header["classes"]), int(header["horizon"])
    has_geo = header.get("geo", "0") == "1"
    fh.readline()
    rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    width = 4 + dim + (2 if has_geo else 0)
    for r in rows:
        if len(r) != width:
            raise ConfigError(f"stream row has {len(r)} fields, expected {width}")
    if rows:
        ints = np.array([[int(v) for v in r[:4]] for r in rows], dtype=np.int64)
        floats = np.array([[float(v) for v in r[4:]] for r in rows], dtype=float)
    else:
        ints = np.zeros((0, 4), dtype=np.int64)
        floats = np.zeros((0, width - 4))
    return Stream(
        ints[:, 0], ints[:, 1], floats[:, :dim], ints[:, 3], ints[:, 2], classes, horizon,
        floats[:, dim:] if has_geo else None,
    )


def stream_from_examples(examples: Sequence[Example], num_classes: int, horizon: int) -> Stream:
    geo = None
    if examples and examples[0].geo is not None:
        geo = [e.geo for e in examples]
    return Stream(
        [e.id for e in examples],
        [e.timestamp for e in examples],
        np.array([e.features for e in examples], dtype=float).reshape(len(examples), -1),
        [e.label for e in examples],
        [e.album_id for e in examples],
        num_classes,
        horizon,
        geo,
    )
