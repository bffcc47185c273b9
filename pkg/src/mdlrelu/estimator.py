"""MDL estimator over the quantized grid of a two-stage code.

Parameters are written as ``v = sum_i theta_i * s_i`` where the synthesis
rows ``s_i`` are the dual basis of the coded directions ``u_i`` (for an
exact eigenbasis both coincide), so ``theta_i = v . u_i``.  Directions
beyond the coded ones are fixed at zero.  The code length is constant over
the grid, so the penalized minimizer is the grid point closest to the
least-squares centre in the metric ``Z^T Z``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import SearchBudgetError
from .model import Dataset
from .spectral import ApproxBasis, GramReport, Spectrum
from .twostage import CodeSpec, nearest_index

Method = Literal["exhaustive", "nearest_plane", "auto"]

EXHAUSTIVE_BUDGET = 10_000_000
_CHUNK = 1 << 16
_SINGULAR_RCOND = 1e-12
_RIDGE = 1e-10


class RidgeFallbackWarning(RuntimeWarning):
    """Normal equations were singular and a small ridge was added."""


@dataclass(frozen=True, eq=False)
class CodedDirections:
    lambdas: np.ndarray
    rows: np.ndarray        # u_i: theta_i = v . u_i
    dual_rows: np.ndarray   # s_i: v = sum_i theta_i s_i
    radius: float = 1.0
    eps1: float = 0.0

    @property
    def D(self) -> int:
        return self.lambdas.size

    @classmethod
    def from_spectrum(cls, spectrum: Spectrum, D: int) -> "CodedDirections":
        U = spectrum.eigenvectors[:D]
        return cls(spectrum.eigenvalues[:D].copy(), U, U)

    @classmethod
    def from_approx_basis(cls, basis: ApproxBasis, gram: GramReport) -> "CodedDirections":
        return cls(basis.eigenvalues, basis.rows, gram.dual_rows, gram.radius, gram.eps1)

    def coordinates(self, v: np.ndarray) -> np.ndarray:
        return self.rows @ np.asarray(v, dtype=float)

    def synthesize(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float) @ self.dual_rows


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    Z: np.ndarray
    y: np.ndarray
    sigma2: float
    rows: np.ndarray
    ZtZ: np.ndarray
    Zty: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def D(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True, eq=False)
class MdlEstimate:
    theta_hat: np.ndarray
    theta_ddot: np.ndarray
    v_ddot: np.ndarray
    objective: float
    neg_log_lik: float
    code_length_nats: float
    alpha: float
    method: str
    clamped: bool = False
    ridged: bool = False

    def to_json(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "theta_ddot": self.theta_ddot.tolist(),
            "objective": self.objective,
            "neg_log_lik": self.neg_log_lik,
            "code_length_nats": self.code_length_nats,
            "method": self.method,
            "clamped": bool(self.clamped),
        }


def reduce(data: Dataset, rows: np.ndarray, sigma2: float) -> ReducedProblem:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != data.features.shape[1]:
        raise ValueError(f"rows have length {rows.shape[1]}, features have {data.features.shape[1]} columns")
    Z = data.features @ rows.T
    H = Z.T @ Z
    return ReducedProblem(Z, data.responses, float(sigma2), rows, 0.5 * (H + H.T), Z.T @ data.responses)


def _solve(problem: ReducedProblem) -> tuple[np.ndarray, bool]:
    H = problem.ZtZ
    ev = np.linalg.eigvalsh(H) if H.size else np.zeros(0)
    if ev.size == 0:
        return np.zeros(0), False
    if ev[0] > _SINGULAR_RCOND * ev[-1]:
        theta, *_ = np.linalg.lstsq(problem.Z, problem.y, rcond=None)
        return theta, False
    ridge = _RIDGE * np.trace(H) / problem.D
    if ridge <= 0.0:
        return np.zeros(problem.D), True
    return np.linalg.solve(H + ridge * np.eye(problem.D), problem.Zty), True


def least_squares(problem: ReducedProblem) -> np.ndarray:
    theta, ridged = _solve(problem)
    if ridged:
        warnings.warn("singular normal equations; ridge fallback applied", RidgeFallbackWarning, stacklevel=2)
    return theta


def _neg_log_lik(problem: ReducedProblem, theta: np.ndarray) -> float:
    r = problem.y - problem.Z @ theta
    return float(r @ r / (2 * problem.sigma2) + 0.5 * problem.n * math.log(2 * math.pi * problem.sigma2))


def _exhaustive(problem: ReducedProblem, spec: CodeSpec, theta_hat: np.ndarray,
                budget: int) -> np.ndarray:
    total = spec.total_points
    if total > budget:
        raise SearchBudgetError(f"grid has {total} points, exhaustive budget is {budget}")
    H = problem.ZtZ
    # f(g) - f(theta_hat) with f(g) = g H g - 2 g.b; the linear term vanishes at an exact solution
    lin = problem.Zty - H @ theta_hat
    grids = spec.grids()
    shape = tuple(int(k) for k in spec.q)
    best_key, best = math.inf, None
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total))
        idx = np.unravel_index(flat, shape)
        G = np.column_stack([g[k] for g, k in zip(grids, idx)]) if grids else np.zeros((flat.size, 0))
        E = G - theta_hat
        key = np.einsum("ij,jk,ik->i", E, H, E) - 2.0 * (G @ lin)
        j = int(np.argmin(key))
        if key[j] < best_key:
            best_key, best = key[j], G[j].copy()
    return best


def _nearest_plane(problem: ReducedProblem, spec: CodeSpec, theta_hat: np.ndarray) -> np.ndarray:
    D = spec.D
    if D == 0:
        return np.zeros(0)
    # coordinates are fixed in decreasing-lambda order; Babai processes the
    # last column of an upper-triangular factor first, so that order is reversed here
    first = np.argsort(-spec.lambdas, kind="stable")
    perm = first[::-1]
    H = problem.ZtZ[np.ix_(perm, perm)]
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        ridge = max(_RIDGE * np.trace(H) / D, np.finfo(float).tiny)
        L = np.linalg.cholesky(H + ridge * np.eye(D))
    R = L.T
    center = theta_hat[perm]
    grids = [spec.grid(int(i)) for i in perm]
    g = np.zeros(D)
    for k in range(D - 1, -1, -1):
        shift = R[k, k + 1:] @ (g[k + 1:] - center[k + 1:]) / R[k, k]
        g[k] = grids[k][nearest_index(grids[k], center[k] - shift)]
    out = np.empty(D)
    out[perm] = g
    return out


def _minimize(problem: ReducedProblem, spec: CodeSpec, method: Method, budget: int):
    if problem.D != spec.D:
        raise ValueError(f"problem has {problem.D} coded directions, code has {spec.D}")
    theta_hat, ridged = _solve(problem)
    if method == "auto":
        method = "exhaustive" if spec.total_points <= budget else "nearest_plane"
    if method == "exhaustive":
        theta_ddot = _exhaustive(problem, spec, theta_hat, budget)
    elif method == "nearest_plane":
        theta_ddot = _nearest_plane(problem, spec, theta_hat)
    else:
        raise ValueError(f"unknown method {method!r}")
    return theta_hat, theta_ddot, method, ridged


def mdl_estimate(problem: ReducedProblem, spec: CodeSpec, alpha: Optional[float] = None,
                 method: Method = "auto", budget: int = EXHAUSTIVE_BUDGET) -> MdlEstimate:
    """Grid point minimizing ``-log p + alpha * L``."""
    if alpha is not None and not math.isclose(alpha, spec.alpha):
        raise ValueError(f"alpha={alpha} does not match the code's alpha={spec.alpha}")
    return _estimate(problem, spec, spec.alpha, method, budget)


def _estimate(problem, spec, alpha, method, budget) -> MdlEstimate:
    theta_hat, theta_ddot, used, ridged = _minimize(problem, spec, method, budget)
    nll = _neg_log_lik(problem, theta_ddot)
    length = float(np.sum(spec.lengths))
    return MdlEstimate(
        theta_hat=theta_hat,
        theta_ddot=theta_ddot,
        v_ddot=theta_ddot @ problem.rows,
        objective=nll + alpha * length,
        neg_log_lik=nll,
        code_length_nats=length,
        alpha=float(alpha),
        method=used,
        clamped=bool(np.any(np.abs(theta_hat) > spec.radius)),
        ridged=ridged,
    )


def fit(data: Dataset, spec: CodeSpec, directions: CodedDirections, sigma2: float,
        method: Method = "auto", budget: int = EXHAUSTIVE_BUDGET) -> MdlEstimate:
    return mdl_estimate(reduce(data, directions.dual_rows, sigma2), spec, method=method, budget=budget)


def l_alpha(data: Dataset, spec: CodeSpec, directions: CodedDirections, sigma2: float,
            alpha: Optional[float] = None, method: Method = "auto",
            budget: int = EXHAUSTIVE_BUDGET) -> float:
    """``min over the grid of -log p + alpha * L``; ``alpha=1`` gives the
    plain two-stage description length of the responses."""
    a = spec.alpha if alpha is None else float(alpha)
    problem = reduce(data, directions.dual_rows, sigma2)
    return _estimate(problem, spec, a, method, budget).objective
