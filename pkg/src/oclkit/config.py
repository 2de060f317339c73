"""Experiment configuration read from flat ``key = value`` text files.

Blank lines and ``#`` comments are ignored. Unknown keys are an error so
typos never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .learner import ARCHITECTURES
from .replay import POLICIES
from .schedule import SCHEDULES
from .stream import DEFAULT_ALBUM_PROBS, AlbumSizes, StreamSpec, drifting_spec


@dataclass
class ExperimentConfig:
    # stream
    dim: int = 16
    classes: int = 10
    length: int = 10_000
    segments: int = 5
    noise: float = 1.0
    drift: float = 0.5
    separation: float = 3.0
    prior_alpha: float = 0.0
    album_sizes: tuple = DEFAULT_ALBUM_PROBS
    p_album: float = 0.9
    geo: bool = False
    holdout: float = 0.01
    stream_seed: Optional[int] = None
    # model
    model: str = "learner"  # or "blind"
    arch: str = "linear"
    hidden: int = 32
    init_seed: Optional[int] = None
    weight_decay: float = 1e-4
    blind_k: int = 10
    # schedule
    schedule: str = "constant"
    lr: float = 0.05
    polrs_interval: int = 0  # 0: steps // 20
    lr_scaling: bool = True
    b_ref: int = 256
    # replay
    replay: str = "fifo"
    buffer_size: int = 1000
    replay_ratio: float = 1.0
    adrep: bool = False
    adrep_eps: float = 0.005
    adrep_interval: int = 0  # 0: steps // 20
    adrep_min: int = 1
    adrep_max: int = 0  # 0: training stream size
    # loop
    batch_size: int = 16
    gd_steps: int = 1
    checkpoints: tuple = (Fraction(1, 3), Fraction(2, 3), Fraction(1))
    transfer_windows: int = 10
    eval_all_albums: bool = False
    parallel_members: bool = False
    audit: bool = False
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.gd_steps < 1:
            raise ConfigError("gd_steps: must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr: must be > 0")
        if self.b_ref < 1:
            raise ConfigError("b_ref: must be >= 1")
        if self.model not in ("learner", "blind"):
            raise ConfigError(f"model: expected learner or blind, got {self.model!r}")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch: expected one of {ARCHITECTURES}, got {self.arch!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule: expected one of {SCHEDULES}, got {self.schedule!r}")
        if self.replay not in POLICIES + ("off",):
            raise ConfigError(f"replay: expected off, fifo or reservoir, got {self.replay!r}")
        if self.adrep and self.replay == "off":
            raise ConfigError("adrep: needs replay = fifo or reservoir")
        if self.replay_ratio < 0:
            raise ConfigError("replay_ratio: must be >= 0")
        if not self.checkpoints or any(not 0 < f <= 1 for f in self.checkpoints):
            raise ConfigError("checkpoints: fractions must lie in (0, 1]")
        if not 0 < self.holdout < 1:
            raise ConfigError("holdout: must lie in (0, 1)")
        if self.transfer_windows < 1:
            raise ConfigError("transfer_windows: must be >= 1")
        return self

    @property
    def effective_stream_seed(self) -> int:
        return self.seed if self.stream_seed is None else self.stream_seed

    @property
    def effective_init_seed(self) -> int:
        return self.seed if self.init_seed is None else self.init_seed

    def stream_spec(self) -> StreamSpec:
        return drifting_spec(
            dim=self.dim,
            num_classes=self.classes,
            length=self.length,
            segments=self.segments,
            noise=self.noise,
            drift=self.drift,
            separation=self.separation,
            prior_alpha=self.prior_alpha,
            album_sizes=AlbumSizes(tuple(self.album_sizes)),
            p_album=self.p_album,
            seed=self.effective_stream_seed,
            geo=self.geo,
        )

    def rng(self, tag: int) -> np.random.Generator:
        """Independent generator per component so components never share draws."""
        return np.random.default_rng([self.seed, tag])

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {format_config_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def format_config_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_config_value(x) for x in v)
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_fraction(s: str) -> Fraction:
    f = Fraction(s.strip())
    if not math.isfinite(float(f)):
        raise ValueError(s)
    return f


_DEFAULTS = ExperimentConfig()


def parse_value(key: str, raw: str):
    default = getattr(_DEFAULTS, key)
    raw = raw.strip()
    try:
        if key == "checkpoints":
            return tuple(_parse_fraction(x) for x in raw.split(",") if x.strip())
        if key == "album_sizes":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if key in ("stream_seed", "init_seed"):
            return None if raw.lower() == "none" else int(raw)
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from exc


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})")
        values[key] = parse_value(key, raw)
    cfg = dataclasses.replace(base or ExperimentConfig(), **values)
    if "album_sizes" in values:
        AlbumSizes(cfg.album_sizes)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())
