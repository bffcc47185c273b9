"""Two-layer ReLU network with a fixed random first layer, viewed as a
linear regression model in the last-layer weights.

Inputs are standard normal, hidden features are ``X = relu(x @ W)`` and the
response is ``y = X @ v + eps`` with ``eps ~ N(0, sigma2)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError


def make_rng(seed: int, *task: int) -> np.random.Generator:
    """Generator for sub-task ``task`` of a run seeded with ``seed``.

    Streams for distinct ``(seed, *task)`` tuples are independent, so trials
    can be scheduled in any order or on any number of workers.
    """
    return np.random.default_rng([int(seed), *(int(t) for t in task)])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkModel:
    W: np.ndarray
    sigma2: float
    seed: Optional[int] = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2:
            raise ConfigError(f"W must be a d x m matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ConfigError("W contains non-finite entries")
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def D(self) -> int:
        """Number of dominant directions, d(d+3)/2."""
        return self.d * (self.d + 3) // 2

    def features(self, inputs: np.ndarray) -> np.ndarray:
        return relu_features(inputs, self.W)

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "sigma2": self.sigma2,
            "W": self.W.ravel(order="C").tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkModel":
        d, m = int(obj["d"]), int(obj["m"])
        W = np.asarray(obj["W"], dtype=float)
        if W.size != d * m:
            raise ConfigError(f"W has {W.size} entries, expected d*m = {d * m}")
        return cls(W=W.reshape(d, m), sigma2=obj["sigma2"], seed=obj.get("seed"))


@dataclass(frozen=True, eq=False)
class TrueParam:
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).ravel()
        if np.linalg.norm(v) > 1.0 + 1e-12:
            raise ConfigError(f"true parameter must satisfy |v| <= 1, got {np.linalg.norm(v)}")
        object.__setattr__(self, "v", _frozen(v))

    @property
    def m(self) -> int:
        return self.v.size


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    features: np.ndarray
    responses: np.ndarray
    noise: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("inputs", "features", "responses"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.noise is not None:
            object.__setattr__(self, "noise", _frozen(self.noise))
        n = self.responses.shape[0]
        if self.inputs.shape[0] != n or self.features.shape[0] != n:
            raise ConfigError("inputs, features and responses must have the same row count")

    @property
    def n(self) -> int:
        return self.responses.shape[0]


def sample_weights(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """First-layer weights with i.i.d. N(0, 1/m) entries."""
    if d < 1 or m < 1:
        raise ConfigError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    return rng.normal(0.0, 1.0 / math.sqrt(m), size=(d, m))


def relu_features(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``max(0, x @ W)`` for a single input row or a batch of rows."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} coordinates but W has {W.shape[0]} rows")
    return np.maximum(x @ W, 0.0)


def sample_true_param(m: int, rng: np.random.Generator) -> TrueParam:
    """Uniform draw from the unit ball in R^m."""
    if m < 1:
        raise ConfigError(f"need m >= 1, got {m}")
    g = rng.standard_normal(m)
    nrm = np.linalg.norm(g)
    while nrm == 0.0:
        g = rng.standard_normal(m)
        nrm = np.linalg.norm(g)
    u = rng.uniform()
    return TrueParam(g * (u ** (1.0 / m)) / nrm)


def generate_dataset(model: NetworkModel, vstar: TrueParam, n: int,
                     rng: np.random.Generator, sigma2: Optional[float] = None) -> Dataset:
    """Draw ``n`` samples from the model at ``vstar``.

    ``sigma2`` overrides the model noise level; ``0`` gives noiseless
    responses and is meant for test fixtures only.
    """
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    if vstar.m != model.m:
        raise ValueError(f"vstar has length {vstar.m}, model width is {model.m}")
    s2 = model.sigma2 if sigma2 is None else float(sigma2)
    if s2 < 0:
        raise ConfigError("noise variance cannot be negative")
    inputs = rng.standard_normal((n, model.d))
    features = relu_features(inputs, model.W)
    noise = rng.normal(0.0, math.sqrt(s2), size=n) if s2 > 0 else np.zeros(n)
    return Dataset(inputs, features, features @ vstar.v + noise, noise)


def neg_log_likelihood(v: np.ndarray, data: Dataset, sigma2: float) -> float:
    """Gaussian negative log-likelihood of the responses, in nats."""
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    v = np.asarray(v, dtype=float)
    if v.shape != (data.features.shape[1],):
        raise ValueError(f"v has shape {v.shape}, expected ({data.features.shape[1]},)")
    r = data.responses - data.features @ v
    return float(r @ r / (2.0 * sigma2) + 0.5 * data.n * math.log(2.0 * math.pi * sigma2))


def save_dataset(path: str | Path, data: Dataset) -> None:
    d = data.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *(f"x_{l + 1}" for l in range(d)), "y"])
        for t in range(data.n):
            w.writerow([t + 1, *(repr(float(v)) for v in data.inputs[t]), repr(float(data.responses[t]))])


def load_dataset(path: str | Path, model: NetworkModel) -> Dataset:
    """Read a dataset CSV; features are recomputed from ``model.W``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    expected = ["t", *(f"x_{l + 1}" for l in range(model.d)), "y"]
    if header != expected:
        raise ConfigError(f"unexpected dataset header {header}, expected {expected}")
    arr = np.array([[float(c) for c in r] for r in body], dtype=float).reshape(-1, len(header))
    inputs = arr[:, 1:-1]
    return Dataset(inputs, relu_features(inputs, model.W), arr[:, -1])


def save_model(path: str | Path, model: NetworkModel) -> None:
    Path(path).write_text(json.dumps(model.to_json()))


def load_model(path: str | Path) -> NetworkModel:
    return NetworkModel.from_json(json.loads(Path(path).read_text()))
