"""Small softmax classifiers trained with plain SGD, plus the blind baseline.

Parameters live in one flat float64 vector. Each layer is stored as an
augmented ``(fan_in + 1, fan_out)`` block whose last row is the bias, so
``softmax-linear`` has ``(d + 1) * C`` parameters and ``mlp-1`` has
``(d + 1) * h + (h + 1) * C``.
"""

from __future__ import annotations

import hashlib
from collections import Counter, deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, IntegrityError, NumericalError, ShapeError

ARCHITECTURES = ("linear", "mlp")


def param_count(arch: str, input_dim: int, num_classes: int, hidden: int = 0) -> int:
    if arch == "linear":
        return (input_dim + 1) * num_classes
    if arch == "mlp":
        return (input_dim + 1) * hidden + (hidden + 1) * num_classes
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(-log_softmax(logits)[np.arange(len(y)), y].mean())


@dataclass
class StepResult:
    loss: float
    logits: np.ndarray  # forward pass before the update

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)


class Learner:
    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        arch: str = "linear",
        hidden: int = 0,
        weight_decay: float = 0.0,
        seed: int = 0,
        params: Optional[np.ndarray] = None,
    ):
        if arch == "mlp" and hidden < 1:
            raise ConfigError("mlp architecture needs hidden >= 1")
        if input_dim < 1 or num_classes < 1:
            raise ConfigError("input_dim and num_classes must be positive")
        if weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        self.arch = arch
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.hidden = int(hidden) if arch == "mlp" else 0
        self.weight_decay = float(weight_decay)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        n = param_count(arch, input_dim, num_classes, self.hidden)
        if params is None:
            self.params = self._init_params()
        else:
            params = np.array(params, dtype=np.float64)
            if params.shape != (n,):
                raise ShapeError(f"expected {n} parameters for {arch}, got {params.shape}")
            self.params = params

    @property
    def shapes(self) -> list:
        if self.arch == "linear":
            return [(self.input_dim + 1, self.num_classes)]
        return [(self.input_dim + 1, self.hidden), (self.hidden + 1, self.num_classes)]

    def _init_params(self) -> np.ndarray:
        blocks = []
        for fan_in_1, fan_out in self.shapes:
            a = np.sqrt(6.0 / (fan_in_1 - 1 + fan_out))
            w = self.rng.uniform(-a, a, size=(fan_in_1, fan_out))
            w[-1] = 0.0
            blocks.append(w.ravel())
        return np.concatenate(blocks)

    def layers(self, theta: Optional[np.ndarray] = None) -> list:
        """Views of ``theta`` (default: own params) reshaped into layer blocks."""
        theta = self.params if theta is None else theta
        out, offset = [], 0
        for shape in self.shapes:
            size = shape[0] * shape[1]
            out.append(theta[offset:offset + size].reshape(shape))
            offset += size
        return out

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs with {self.input_dim} features, got shape {X.shape}")
        return X

    def logits(self, X) -> np.ndarray:
        X = self._check_X(X)
        if self.arch == "linear":
            (A,) = self.layers()
            return X @ A[:-1] + A[-1]
        A1, A2 = self.layers()
        hidden = np.maximum(X @ A1[:-1] + A1[-1], 0.0)
        return hidden @ A2[:-1] + A2[-1]

    def predict(self, X):
        z = self.logits(X)
        return z, z.argmax(axis=1)

    def loss_and_grad(self, X, y):
        """Mean cross-entropy, its gradient w.r.t. params (without decay), and the logits."""
        X = self._check_X(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X) or len(y) == 0:
            raise ShapeError(f"batch needs matching non-empty X and y, got {len(X)} and {len(y)}")
        n = len(y)
        grad = np.empty_like(self.params)
        if self.arch == "linear":
            (A,) = self.layers()
            z = X @ A[:-1] + A[-1]
            logp = log_softmax(z)
            dz = np.exp(logp)
            dz[np.arange(n), y] -= 1.0
            dz /= n
            (G,) = self.layers(grad)
            G[:-1] = X.T @ dz
            G[-1] = dz.sum(axis=0)
        else:
            A1, A2 = self.layers()
            pre = X @ A1[:-1] + A1[-1]
            h = np.maximum(pre, 0.0)
            z = h @ A2[:-1] + A2[-1]
            logp = log_softmax(z)
            dz = np.exp(logp)
            dz[np.arange(n), y] -= 1.0
            dz /= n
            G1, G2 = self.layers(grad)
            G2[:-1] = h.T @ dz
            G2[-1] = dz.sum(axis=0)
            dpre = (dz @ A2[:-1].T) * (pre > 0.0)
            G1[:-1] = X.T @ dpre
            G1[-1] = dpre.sum(axis=0)
        loss = float(-logp[np.arange(n), y].mean())
        return loss, grad, z

    def loss(self, X, y) -> float:
        return cross_entropy(self.logits(X), np.asarray(y))

    def sgd_step(self, X, y, lr: float) -> StepResult:
        """One step of ``theta -= lr * (grad + weight_decay * theta)``, in place."""
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        loss, grad, z = self.loss_and_grad(X, y)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite loss {loss} (max |logit| {np.abs(z).max():.3g}, lr {lr})"
            )
        if lr:
            grad += self.weight_decay * self.params
            self.params -= lr * grad
            if not np.all(np.isfinite(self.params)):
                raise NumericalError(f"parameters became non-finite after a step with lr {lr}")
        return StepResult(loss, z)

    def same_architecture(self, other: "Learner") -> bool:
        return (self.arch, self.input_dim, self.num_classes, self.hidden) == (
            other.arch, other.input_dim, other.num_classes, other.hidden)

    def clone(self, seed=None) -> "Learner":
        return Learner(self.input_dim, self.num_classes, self.arch, self.hidden, self.weight_decay,
                       self.seed if seed is None else seed, params=self.params)

    # -- checkpoint text format ------------------------------------------------

    def to_text(self) -> str:
        body = "".join(format(float(v), ".17g") + "\n" for v in self.params)
        digest = hashlib.sha256(body.encode()).hexdigest()
        header = (
            f"arch={self.arch} input_dim={self.input_dim} num_classes={self.num_classes} "
            f"hidden={self.hidden} weight_decay={self.weight_decay!r}\n"
            f"n_params={len(self.params)} sha256={digest}\n"
        )
        return header + body

    @classmethod
    def from_text(cls, text: str) -> "Learner":
        lines = text.splitlines()
        try:
            head = dict(kv.split("=", 1) for kv in lines[0].split())
            meta = dict(kv.split("=", 1) for kv in lines[1].split())
            body_lines = lines[2:]
            n = int(meta["n_params"])
            body = "".join(line + "\n" for line in body_lines)
            if len(body_lines) != n or hashlib.sha256(body.encode()).hexdigest() != meta["sha256"]:
                raise IntegrityError("checkpoint body does not match its header")
            params = np.array([float(v) for v in body_lines], dtype=np.float64)
            return cls(int(head["input_dim"]), int(head["num_classes"]), head["arch"],
                       int(head["hidden"]), float(head["weight_decay"]), params=params)
        except IntegrityError:
            raise
        except (IndexError, KeyError, ValueError) as exc:
            raise IntegrityError(f"corrupt checkpoint: {exc}") from exc


def copy_weights(src: Learner, dst: Learner) -> None:
    """Overwrite ``dst``'s parameters with ``src``'s; RNG states stay put."""
    if not src.same_architecture(dst):
        raise ConfigError("copy_weights needs identical architectures")
    dst.params[...] = src.params


class BlindClassifier:
    """Predicts the most frequent of the last ``k`` observed labels.

    Ties go to the most recently seen of the tied labels; an empty window
    predicts label 0.
    """

    def __init__(self, k: int = 10):
        if k < 1:
            raise ConfigError("blind window k must be positive")
        self.k = k
        self.window = deque(maxlen=k)

    def predict(self) -> int:
        if not self.window:
            return 0
        counts = Counter(self.window)
        top = max(counts.values())
        for label in reversed(self.window):
            if counts[label] == top:
                return label
        raise AssertionError("unreachable")

    def update(self, labels) -> None:
        for label in np.atleast_1d(labels):
            self.window.append(int(label))


def blind_predict(state: BlindClassifier) -> int:
    return state.predict()


def blind_update(state: BlindClassifier, labels) -> None:
    state.update(labels)
