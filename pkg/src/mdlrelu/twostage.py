"""Two-stage code over a per-direction quantized parameter grid.

Each coded direction ``i`` with FIM eigenvalue ``lam_i / sigma2`` gets a
uniform grid of ``q_i = ceil(2 r / Delta_i)`` points spaced
``Delta_i = 2 sqrt(alpha sigma2 / (n lam_i))`` apart and centred on zero.
Every grid point of a direction costs ``log q_i`` nats, and directions that
are not coded sit at the origin for free.  All lengths are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class CodeSpec:
    alpha: float
    sigma2: float
    n: int
    radius: float
    lambdas: np.ndarray
    deltas: np.ndarray
    q: np.ndarray
    lengths: np.ndarray
    c: np.ndarray

    @property
    def D(self) -> int:
        return self.lambdas.size

    @property
    def q_prime(self) -> np.ndarray:
        return self.q - 1

    @property
    def total_points(self) -> int:
        return math.prod(int(k) for k in self.q)

    def grid(self, i: int) -> np.ndarray:
        """Grid of direction ``i``, ascending: ``Delta_i * (k - q'_i / 2)``."""
        qp = int(self.q[i]) - 1
        return self.deltas[i] * (np.arange(qp + 1) - qp / 2.0)

    def grids(self) -> list[np.ndarray]:
        return [self.grid(i) for i in range(self.D)]

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "sigma2": self.sigma2,
            "n": self.n,
            "D": self.D,
            "radius": self.radius,
            "directions": [
                {"lambda": float(l), "delta": float(dl), "q": int(k), "length_nats": float(L)}
                for l, dl, k, L in zip(self.lambdas, self.deltas, self.q, self.lengths)
            ],
        }


@dataclass(frozen=True)
class LengthBoundCheck:
    holds: np.ndarray
    slack: np.ndarray
    applicable: np.ndarray  # c_i sqrt(n) >= 1, where the bound is guaranteed


def build_code(eigenvalues: Sequence[float], alpha: float, sigma2: float, n: int,
               radius: float = 1.0) -> CodeSpec:
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if not alpha > 1:
        raise ConfigError(f"alpha must exceed 1, got {alpha}")
    if not sigma2 > 0:
        raise ConfigError(f"sigma2 must be positive, got {sigma2}")
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    if not radius >= 1:
        raise ConfigError(f"radius must be at least 1, got {radius}")
    if np.any(~(lam > 0)):
        raise ConfigError("every coded eigenvalue must be positive; drop the others before coding")
    deltas = 2.0 * np.sqrt(alpha * sigma2 / (n * lam))
    q = np.maximum(np.ceil(2.0 * radius / deltas), 1).astype(np.int64)
    c = radius * np.sqrt(lam / (alpha * sigma2))
    for a in (lam, deltas, q, c):
        a.setflags(write=False)
    lengths = np.log(q.astype(float))
    lengths.setflags(write=False)
    return CodeSpec(float(alpha), float(sigma2), int(n), float(radius), lam, deltas, q, lengths, c)


def code_length(spec: CodeSpec, grid_point_indices: Sequence[int]) -> float:
    idx = np.asarray(grid_point_indices)
    if idx.shape != (spec.D,):
        raise IndexError(f"expected {spec.D} indices, got shape {idx.shape}")
    if np.any(idx < 0) or np.any(idx >= spec.q):
        raise IndexError("grid index out of range")
    return float(np.sum(spec.lengths))


def kraft_sum(spec: CodeSpec) -> float:
    """Sum of ``exp(-L)`` over the whole product grid, in closed form."""
    return float(np.prod(spec.q * np.exp(-spec.lengths)))


def length_bound_check(spec: CodeSpec) -> LengthBoundCheck:
    """Compare ``L_i`` with ``log(n)/2 + log c_i + 1/(c_i sqrt n)``."""
    rn = math.sqrt(spec.n)
    bound = 0.5 * math.log(spec.n) + np.log(spec.c) + 1.0 / (spec.c * rn)
    slack = bound - spec.lengths
    return LengthBoundCheck(slack >= -1e-12, slack, spec.c * rn >= 1.0)


def quantize_point(spec: CodeSpec, theta: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest grid point per coordinate, ties going to the smaller value.

    Returns the quantized point and a per-coordinate flag marking inputs
    outside ``[-radius, radius]`` (those are still snapped to the grid).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.D,):
        raise ValueError(f"theta must have shape ({spec.D},), got {theta.shape}")
    out = np.empty(spec.D)
    for i in range(spec.D):
        out[i] = _nearest(spec.grid(i), theta[i])
    return out, np.abs(theta) > spec.radius


def nearest_index(grid: np.ndarray, value: float) -> int:
    """Index of the point of an ascending uniform grid closest to ``value``."""
    qp = grid.size - 1
    if qp == 0:
        return 0
    step = grid[1] - grid[0]
    k = int(np.clip(math.floor((value - grid[0]) / step), 0, qp))
    best = k
    for j in (k - 1, k + 1):
        if 0 <= j <= qp:
            dj, db = abs(value - grid[j]), abs(value - grid[best])
            if dj < db or (dj == db and j < best):
                best = j
    return best


def _nearest(grid: np.ndarray, value: float) -> float:
    return float(grid[nearest_index(grid, value)])
