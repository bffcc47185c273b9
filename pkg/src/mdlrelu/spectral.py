"""Fisher information structure of the ReLU regression model.

For this Gaussian linear model the FIM is ``J / sigma2`` with
``J = E[X^T X]``, so everything here works with ``J`` and leaves the noise
level to the caller.  Besides Monte Carlo and empirical estimates of ``J``,
the module builds the analytic approximate eigenbasis of ``J`` (the
``D = d(d+3)/2`` dominant directions determined by ``W``), the residual
series ``R`` and the Gram diagnostics of that basis.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from .errors import DegenerateBasisError, NumericalError
from .model import Dataset, NetworkModel

FimSource = Literal["empirical", "monte_carlo", "analytic_reconstruction"]

MC_CHUNK = 4096
DEFAULT_MC_SAMPLES = 100_000
GS_TOL = 1e-6
R_REL_TOL = 1e-12
R_MAX_TERMS = 200
GRAM_MAX_COND = 1e12
_R_CLOSED_FORM_RHO2 = 0.5

_MATRIX_MAGIC = b"FIMJ"
_MATRIX_VERSION = 1


@dataclass(frozen=True, eq=False)
class FimMatrix:
    J: np.ndarray
    source: FimSource
    sample_count: int = 0

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError(f"J must be square, got shape {J.shape}")
        scale = max(float(np.max(np.abs(J), initial=0.0)), np.finfo(float).tiny)
        if np.max(np.abs(J - J.T), initial=0.0) > 1e-12 * scale:
            raise NumericalError("J is not symmetric")
        J = 0.5 * (J + J.T)
        J.setflags(write=False)
        object.__setattr__(self, "J", J)

    @property
    def m(self) -> int:
        return self.J.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.J))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.J)[0])


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # rows are unit eigenvectors, same order as eigenvalues
    trace: float

    def reconstruct(self) -> np.ndarray:
        return (self.eigenvectors.T * self.eigenvalues) @ self.eigenvectors

    def top_share(self, D: int) -> float:
        return 1.0 - beta_D(self, D)


@dataclass(frozen=True, eq=False)
class ApproxBasis:
    """Rows ``[v0; W_1..W_d; vbar_1..vbar_{d-1}; v_ab (a<b)]`` and their
    grouped approximate eigenvalues."""

    rows: np.ndarray
    eigenvalues: np.ndarray
    labels: tuple[str, ...]
    d: int

    @property
    def D(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class GramReport:
    G: np.ndarray
    eps1: float
    dual_rows: np.ndarray
    gram_eigenvalues: np.ndarray

    @property
    def radius(self) -> float:
        """Half-range of the coded coordinates, sqrt(1 + eps1)."""
        return math.sqrt(1.0 + self.eps1)


def empirical_fim(data: Dataset) -> FimMatrix:
    X = data.features
    return FimMatrix(X.T @ X / data.n, "empirical", data.n)


def monte_carlo_fim(model: NetworkModel, samples: int = DEFAULT_MC_SAMPLES,
                    rng: Optional[np.random.Generator] = None,
                    chunk: int = MC_CHUNK) -> FimMatrix:
    """Average of ``X^T X`` over ``samples`` fresh standard normal inputs.

    Inputs are drawn in fixed-size chunks in a fixed order, so the result
    depends only on the generator state, not on memory limits.
    """
    if samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    rng = np.random.default_rng() if rng is None else rng
    J = np.zeros((model.m, model.m))
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        X = model.features(rng.standard_normal((k, model.d)))
        J += X.T @ X
        done += k
    J /= samples
    return FimMatrix(0.5 * (J + J.T), "monte_carlo", samples)


def exact_spectrum(fim: FimMatrix) -> Spectrum:
    try:
        w, V = np.linalg.eigh(fim.J)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver failed: {exc}") from exc
    order = np.argsort(w, kind="stable")[::-1]
    return Spectrum(w[order], np.ascontiguousarray(V[:, order].T), fim.trace)


def beta_D(spectrum: Spectrum, D: int) -> float:
    """Share of the spectrum carried by eigenvalues beyond the top ``D``.

    Negative eigenvalues from round-off are treated as zero.
    """
    lam = np.clip(spectrum.eigenvalues, 0.0, None)
    m = lam.size
    if not 1 <= D <= m:
        raise ValueError(f"D must lie in [1, {m}], got {D}")
    total = float(lam.sum())
    if total <= 0.0:
        raise NumericalError("spectrum has zero trace; the model is degenerate")
    return float(lam[D:].sum() / total)


def approx_eigenvalues(d: int) -> np.ndarray:
    D = d * (d + 3) // 2
    return np.concatenate([
        [(2 * d + 1) / (4 * math.pi)],
        np.full(d, 0.25),
        np.full(D - d - 1, 1.0 / (2 * math.pi * d)),
    ])


def _gram_schmidt(vectors: np.ndarray, tol: float, scale: float) -> np.ndarray:
    """Orthonormalize, dropping vectors that are round-off relative to
    ``scale`` or whose residual is below ``tol`` times their own norm."""
    basis: list[np.ndarray] = []
    for v in vectors:
        norm0 = np.linalg.norm(v)
        r = v.copy()
        for _ in range(2):  # second pass restores orthogonality lost to cancellation
            for b in basis:
                r -= (r @ b) * b
        nr = np.linalg.norm(r)
        if norm0 <= tol * scale or nr < tol * norm0:
            continue
        basis.append(r / nr)
    return np.array(basis).reshape(len(basis), vectors.shape[1])


def approx_basis(model: NetworkModel, gs_tol: float = GS_TOL) -> ApproxBasis:
    W = model.W
    d = model.d
    col = np.linalg.norm(W, axis=0)
    if np.any(col == 0.0):
        raise DegenerateBasisError("W has a zero column; the basis vectors are undefined")
    sd = math.sqrt(d)
    v0 = col / sd

    def v_pair(a: int, b: int) -> np.ndarray:
        return sd * W[a] * W[b] / col

    v_gamma = np.array([(v_pair(g, g) - v0) / math.sqrt(2.0) for g in range(d)])
    vbar = _gram_schmidt(v_gamma, gs_tol, float(np.linalg.norm(v0)))
    if vbar.shape[0] != d - 1:
        raise DegenerateBasisError(
            f"span of the v_gamma vectors has numerical rank {vbar.shape[0]}, expected {d - 1}")
    pairs = list(combinations(range(d), 2))
    rows = np.vstack([v0[None, :], W, vbar, *(v_pair(a, b)[None, :] for a, b in pairs)])
    labels = ("v0", *(f"W{l + 1}" for l in range(d)), *(f"vbar{s + 1}" for s in range(d - 1)),
              *(f"v{a + 1}{b + 1}" for a, b in pairs))
    rows.setflags(write=False)
    return ApproxBasis(rows, approx_eigenvalues(d), labels, d)


def residual_matrix(model: NetworkModel, rel_tol: float = R_REL_TOL,
                    max_terms: int = R_MAX_TERMS) -> np.ndarray:
    """The PSD remainder ``R`` of the approximate decomposition of ``J``.

    ``R_ij = |W_i||W_j|/(2 pi) * sum_{n>=1} C(2n,n) rho^(2n+2) / (4^n (2n+1)(2n+2))``
    where ``rho`` is the cosine between columns ``i`` and ``j``.  Each entry
    is summed until the next term drops to ``rel_tol`` times the partial sum
    or ``max_terms`` terms have been used.  The series converges slowly near
    ``|rho| = 1`` (terms decay like ``n^-2.5``), so entries with
    ``rho^2 > 1/2`` use the equivalent closed form
    ``sqrt(1 - rho^2) + rho asin(rho) - 1 - rho^2 / 2``, which has no
    cancellation problem there.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    W = model.W
    col = np.linalg.norm(W, axis=0)
    if np.any(col == 0.0):
        raise DegenerateBasisError("W has a zero column")
    m = model.m
    iu, ju = np.triu_indices(m)
    scale = col[iu] * col[ju]
    rho = (W.T @ W)[iu, ju] / scale
    if np.max(np.abs(rho), initial=0.0) > 1.0 + 1e-9:
        raise NumericalError("column cosine exceeds 1 beyond round-off")
    rho2 = np.minimum(rho * rho, 1.0)

    # t_1 = rho^4 / 24; t_{n+1} / t_n = (2n+1)^2 rho^2 / ((2n+3)(2n+4))
    near = rho2 > _R_CLOSED_FORM_RHO2
    term = rho2 * rho2 / 24.0
    total = term.copy()
    active = np.flatnonzero(~near)
    t_act, r_act = term[active], rho2[active]
    for n in range(1, max_terms):
        nxt = t_act * r_act * ((2 * n + 1) ** 2 / ((2 * n + 3) * (2 * n + 4)))
        keep = nxt > rel_tol * total[active]
        active, t_act, r_act = active[keep], nxt[keep], r_act[keep]
        if active.size == 0:
            break
        total[active] += t_act
    r = np.clip(rho[near], -1.0, 1.0)
    total[near] = np.sqrt(1.0 - rho2[near]) + r * np.arcsin(r) - 1.0 - rho2[near] / 2.0
    vals = total * scale / (2.0 * math.pi)
    R = np.zeros((m, m))
    R[iu, ju] = vals
    R[ju, iu] = vals
    return R


def gram_report(basis: ApproxBasis) -> GramReport:
    U = basis.rows
    G = U @ U.T
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0.0 or ev[-1] / ev[0] > GRAM_MAX_COND:
        raise DegenerateBasisError(
            f"Gram matrix is singular or ill-conditioned (eigenvalues {ev[0]:.3g}..{ev[-1]:.3g})")
    eps1 = float(max(np.max(np.abs(ev - 1.0)), np.max(np.abs(1.0 / ev - 1.0))))
    dual = np.linalg.solve(G, U)
    return GramReport(G, eps1, dual, ev)


def analytic_fim_reconstruction(basis: ApproxBasis, R: Optional[np.ndarray] = None) -> FimMatrix:
    U = basis.rows
    J = (U.T * basis.eigenvalues) @ U
    if R is not None:
        J = J + R
    return FimMatrix(0.5 * (J + J.T), "analytic_reconstruction", 0)


def spectrum_summary(spectrum: Spectrum, D: int, gram: Optional[GramReport] = None) -> dict:
    return {
        "eigenvalues": spectrum.eigenvalues.tolist(),
        "trace": spectrum.trace,
        "D": int(D),
        "eps1": None if gram is None else gram.eps1,
        "beta_at_D": beta_D(spectrum, D),
    }


def save_matrix(path: str | Path, A: np.ndarray) -> None:
    """Row-major little-endian float64 dump behind a 16-byte header."""
    A = np.ascontiguousarray(A, dtype="<f8")
    if A.ndim != 2:
        raise ValueError("only 2-d matrices can be dumped")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_MAGIC + struct.pack("<III", _MATRIX_VERSION, *A.shape))
        fh.write(A.tobytes(order="C"))


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != _MATRIX_MAGIC:
            raise ValueError(f"{path} is not a FIMJ matrix dump")
        version, rows, cols = struct.unpack("<III", header[4:])
        if version != _MATRIX_VERSION:
            raise ValueError(f"unsupported FIMJ version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(float)
