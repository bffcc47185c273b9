"""Generalization risk, code redundancy and the closed-form risk bounds.

Risk is measured by the conditional Renyi divergence between the true
conditional density and the fitted one, averaged over the Gaussian input
law by Monte Carlo.  Redundancy is the excess code length
``log p*(y|x) - log q(y|x)`` of the two-stage code, ``q = p_vddot e^{-alpha L}``.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import ConfigError, NumericalError
from .estimator import CodedDirections, Method, fit
from .model import NetworkModel, TrueParam, generate_dataset, make_rng, neg_log_likelihood
from .spectral import FimMatrix
from .twostage import CodeSpec

DEFAULT_RENYI_SAMPLES = 20_000


class MeanSE(NamedTuple):
    mean: float
    se: float

    @classmethod
    def of(cls, values: np.ndarray) -> "MeanSE":
        values = np.asarray(values, dtype=float)
        se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
        return cls(float(np.mean(values)), se)


@dataclass(frozen=True)
class RenyiConfig:
    lambda_order: float
    mc_samples: int = DEFAULT_RENYI_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lambda_order < 1.0:
            raise ConfigError(f"Renyi order must lie in (0, 1), got {self.lambda_order}")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be positive")

    @classmethod
    def for_alpha(cls, alpha: float, **kw) -> "RenyiConfig":
        """Largest order admitted by the risk bound, ``1 - 1/alpha``."""
        return cls(1.0 - 1.0 / alpha, **kw)

    def features(self, model: NetworkModel) -> np.ndarray:
        """The shared bank of hidden features used for every evaluation."""
        x = make_rng(self.seed).standard_normal((self.mc_samples, model.d))
        return model.features(x)


@dataclass(frozen=True)
class BoundBreakdown:
    scale: str  # "redundancy" (total over n samples) or "risk" (per-sample risk)
    term_log: float
    term_c: float
    term_dim: float
    term_tail: float
    beta: float
    trace: float
    eps1: float = 0.0
    beta_clipped: bool = False

    @property
    def total(self) -> float:
        return self.term_log + self.term_c + self.term_dim + self.term_tail

    @property
    def coded(self) -> float:
        return self.term_log + self.term_c + self.term_dim


def gaussian_renyi_integrand(delta, lam: float, sigma2: float):
    """``E_{p1}[(p2/p1)^(1-lam)]`` for two ``N(., sigma2)`` densities whose
    means differ by ``delta``."""
    delta = np.asarray(delta, dtype=float)
    return np.exp(-lam * (1.0 - lam) * delta * delta / (2.0 * sigma2))


def quadrature_renyi_integrand(mu1: float, mu2: float, lam: float, sigma2: float) -> float:
    """Numerical ``int p1^lam p2^(1-lam) dy``; reference for the closed form."""
    s = math.sqrt(sigma2)

    def f(y):
        l1 = -((y - mu1) ** 2) / (2 * sigma2)
        l2 = -((y - mu2) ** 2) / (2 * sigma2)
        return math.exp(lam * l1 + (1 - lam) * l2) / math.sqrt(2 * math.pi * sigma2)

    centre = lam * mu1 + (1 - lam) * mu2
    val, _ = integrate.quad(f, centre - 40 * s, centre + 40 * s, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


@functools.cache
def validate_renyi_closed_form(tol: float = 1e-8) -> float:
    """Check the closed form against quadrature at fixed inputs.

    Returns the largest absolute discrepancy; raises if it exceeds ``tol``.
    """
    cases = [(0.0, 0.3, 0.5, 1.0), (1.2, -0.7, 0.25, 0.5), (-2.0, 1.5, 0.9, 2.0),
             (0.4, 0.41, 0.1, 0.01), (3.0, 0.0, 0.5, 4.0)]
    worst = 0.0
    for mu1, mu2, lam, s2 in cases:
        closed = float(gaussian_renyi_integrand(mu1 - mu2, lam, s2))
        worst = max(worst, abs(closed - quadrature_renyi_integrand(mu1, mu2, lam, s2)))
    if worst > tol:
        raise NumericalError(f"closed-form Renyi integrand disagrees with quadrature by {worst:.3g}")
    return worst


def _renyi_terms(v1, v2, model, cfg, features):
    validate_renyi_closed_form()
    X = cfg.features(model) if features is None else features
    delta = X @ (np.asarray(v2, dtype=float) - np.asarray(v1, dtype=float))
    lam = cfg.lambda_order
    return -lam * (1.0 - lam) * delta * delta / (2.0 * model.sigma2)


def renyi_conditional(v1, v2, model: NetworkModel, cfg: RenyiConfig,
                      features: Optional[np.ndarray] = None) -> float:
    """Monte Carlo conditional Renyi divergence ``d_lam(p_v1, p_v2)``.

    ``features`` may carry a precomputed bank from ``cfg.features(model)``.
    """
    a = _renyi_terms(v1, v2, model, cfg, features)
    log_mean = logsumexp(a) - math.log(a.size)
    return float(-log_mean / (1.0 - cfg.lambda_order))


def renyi_conditional_estimate(v1, v2, model: NetworkModel, cfg: RenyiConfig,
                               features: Optional[np.ndarray] = None) -> MeanSE:
    """As :func:`renyi_conditional`, with a delta-method standard error."""
    a = _renyi_terms(v1, v2, model, cfg, features)
    shift = a.max()
    w = np.exp(a - shift)
    mean_w = w.mean()
    se_w = w.std(ddof=1) / math.sqrt(w.size) if w.size > 1 else math.nan
    d = -(math.log(mean_w) + shift) / (1.0 - cfg.lambda_order)
    return MeanSE(float(d), float(se_w / (mean_w * (1.0 - cfg.lambda_order))))


def kl_conditional(v1, v2, J, sigma2: float) -> float:
    J = J.J if isinstance(J, FimMatrix) else np.asarray(J, dtype=float)
    diff = np.asarray(v1, dtype=float) - np.asarray(v2, dtype=float)
    if J.shape != (diff.size, diff.size):
        raise ValueError(f"J has shape {J.shape}, parameters have length {diff.size}")
    return float(max(diff @ J @ diff, 0.0) / (2.0 * sigma2))


def _c_terms(lambdas, c_scale, alpha, sigma2, n):
    lam = np.asarray(lambdas, dtype=float)
    if np.any(~(lam > 0)):
        raise ConfigError("coded eigenvalues must be positive")
    if not alpha > 1:
        raise ConfigError("alpha must exceed 1")
    c = np.sqrt(c_scale * lam / (alpha * sigma2))
    return float(np.sum(np.log(c) + 1.0 / (c * math.sqrt(n))))


def thm2_rhs(lambdas: Sequence[float], trace: float, alpha: float, sigma2: float, n: int) -> BoundBreakdown:
    """Redundancy bound for coding the top ``len(lambdas)`` exact eigendirections."""
    lam = np.asarray(lambdas, dtype=float)
    D = lam.size
    beta = max(1.0 - float(lam.sum()) / trace, 0.0)
    return BoundBreakdown(
        scale="redundancy",
        term_log=alpha * D * math.log(n) / 2.0,
        term_c=alpha * _c_terms(lam, 1.0, alpha, sigma2, n),
        term_dim=alpha * D / 2.0,
        term_tail=2.0 * n * beta * trace / sigma2,
        beta=beta,
        trace=float(trace),
    )


def cor1_rhs(lambdas: Sequence[float], trace: float, alpha: float, sigma2: float, n: int) -> BoundBreakdown:
    """Per-sample risk bound implied by :func:`thm2_rhs`."""
    t2 = thm2_rhs(lambdas, trace, alpha, sigma2, n)
    return BoundBreakdown(
        scale="risk",
        term_log=t2.term_log / n,
        term_c=t2.term_c / n,
        term_dim=t2.term_dim / n,
        term_tail=t2.term_tail / n,
        beta=t2.beta,
        trace=t2.trace,
    )


def thm3_rhs(lambdas: Sequence[float], trace: float, alpha: float, sigma2: float, n: int,
             eps1: float) -> BoundBreakdown:
    """Risk bound for the code built on the approximate ReLU eigenbasis.

    The tail share ``beta = 1 - sum(lambdas)/trace`` is clipped at zero when
    the approximate eigenvalues over-count the trace; ``beta_clipped`` flags it.
    """
    if eps1 < 0:
        raise ConfigError("eps1 must be nonnegative")
    if not trace > 0:
        raise ConfigError("trace must be positive")
    lam = np.asarray(lambdas, dtype=float)
    D = lam.size
    raw_beta = 1.0 - float(lam.sum()) / trace
    beta = max(raw_beta, 0.0)
    return BoundBreakdown(
        scale="risk",
        term_log=D * math.log(n) / (2.0 * n),
        term_c=alpha / n * _c_terms(lam, 1.0 + eps1, alpha, sigma2, n),
        term_dim=D * alpha / (2.0 * n),
        term_tail=2.0 * (1.0 + eps1) * (beta + eps1) * trace / sigma2,
        beta=beta,
        trace=float(trace),
        eps1=float(eps1),
        beta_clipped=raw_beta < 0.0,
    )


@dataclass(frozen=True)
class TrialResults:
    risk: np.ndarray
    redundancy: np.ndarray
    n: int

    @property
    def risk_summary(self) -> MeanSE:
        return MeanSE.of(self.risk)

    @property
    def redundancy_summary(self) -> MeanSE:
        return MeanSE.of(self.redundancy)

    def risk_redundancy_gap(self) -> tuple[float, float]:
        """``mean risk - mean redundancy / n`` and its combined standard error."""
        r, q = self.risk_summary, self.redundancy_summary
        return r.mean - q.mean / self.n, math.hypot(r.se, q.se / self.n)


def simulate(model: NetworkModel, vstar: TrueParam, spec: CodeSpec, directions: CodedDirections,
             trials: int, n: int, seed: int, cfg: Optional[RenyiConfig] = None,
             method: Method = "auto", threads: int = 1, stream: tuple[int, ...] = ()) -> TrialResults:
    """Fit the MDL estimator on ``trials`` independent datasets.

    Trial ``t`` draws its data from ``make_rng(seed, *stream, t)``, so results
    do not depend on ``threads``.  Risk is left as NaN when ``cfg`` is None.
    """
    if trials < 2:
        raise ConfigError("need at least two trials for a standard error")
    if spec.n != n:
        raise ConfigError(f"code was built for n={spec.n}, trials use n={n}")
    if cfg is not None and cfg.lambda_order > 1.0 - 1.0 / spec.alpha + 1e-12:
        raise ConfigError(f"Renyi order {cfg.lambda_order} exceeds 1 - 1/alpha = {1 - 1 / spec.alpha}")
    bank = cfg.features(model) if cfg is not None else None
    length = float(np.sum(spec.lengths))

    def one(t: int) -> tuple[float, float]:
        data = generate_dataset(model, vstar, n, make_rng(seed, *stream, t))
        est = fit(data, spec, directions, model.sigma2, method=method)
        red = est.neg_log_lik + spec.alpha * length - neg_log_likelihood(vstar.v, data, model.sigma2)
        risk = math.nan if cfg is None else renyi_conditional(vstar.v, est.v_ddot, model, cfg, bank)
        return risk, red

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(trials)))
    else:
        out = [one(t) for t in range(trials)]
    arr = np.array(out)
    return TrialResults(arr[:, 0], arr[:, 1], n)


def empirical_redundancy(model, vstar, spec, directions, trials, n, seed,
                         method: Method = "auto", threads: int = 1) -> MeanSE:
    return simulate(model, vstar, spec, directions, trials, n, seed,
                    method=method, threads=threads).redundancy_summary


def empirical_risk(model, vstar, spec, directions, cfg: RenyiConfig, trials, n, seed,
                   method: Method = "auto", threads: int = 1) -> MeanSE:
    return simulate(model, vstar, spec, directions, trials, n, seed, cfg,
                    method=method, threads=threads).risk_summary


def log_ratio_estimate(model: NetworkModel, vstar: TrueParam, v, n: int, trials: int, seed: int) -> MeanSE:
    """Monte Carlo ``E[log p_vstar(y^n|x^n) / p_v(y^n|x^n)]`` over fresh data."""
    v = np.asarray(v, dtype=float)
    vals = np.empty(trials)
    for t in range(trials):
        data = generate_dataset(model, vstar, n, make_rng(seed, t))
        vals[t] = neg_log_likelihood(v, data, model.sigma2) - neg_log_likelihood(vstar.v, data, model.sigma2)
    return MeanSE.of(vals)


RISK_CSV_COLUMNS = ("n", "alpha", "lambda_order", "D", "trials", "risk_mean", "risk_se",
                    "redundancy_mean", "redundancy_se", "bound_cor1", "bound_thm3",
                    "term_log", "term_c", "term_dim", "term_tail", "eps1", "beta", "trace")


def risk_row(results: TrialResults, alpha: float, lambda_order: float, D: int,
             cor1: Optional[BoundBreakdown], thm3: Optional[BoundBreakdown]) -> dict:
    """One RiskReport CSV row; the term columns follow ``thm3`` when present."""
    terms = thm3 if thm3 is not None else cor1
    r, q = results.risk_summary, results.redundancy_summary
    return {
        "n": results.n, "alpha": alpha, "lambda_order": lambda_order, "D": D,
        "trials": results.risk.size,
        "risk_mean": r.mean, "risk_se": r.se,
        "redundancy_mean": q.mean, "redundancy_se": q.se,
        "bound_cor1": None if cor1 is None else cor1.total,
        "bound_thm3": None if thm3 is None else thm3.total,
        "term_log": terms.term_log, "term_c": terms.term_c,
        "term_dim": terms.term_dim, "term_tail": terms.term_tail,
        "eps1": terms.eps1, "beta": terms.beta, "trace": terms.trace,
    }
