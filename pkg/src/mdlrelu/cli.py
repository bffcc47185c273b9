"""Experiment harness: ``mdlrelu <experiment> --config cfg.json [overrides]``.

Every artifact starts with a timestamp comment and a config echo; the
remaining content is a pure function of the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import spectral as sp
from .errors import ConfigError, MdlError, NumericalError, SearchBudgetError
from .estimator import CodedDirections, fit, l_alpha
from .model import NetworkModel, generate_dataset, make_rng, sample_true_param, sample_weights
from .risk import (RISK_CSV_COLUMNS, RenyiConfig, cor1_rhs, risk_row, simulate, thm3_rhs)
from .twostage import build_code, kraft_sum, length_bound_check

log = logging.getLogger("mdlrelu")

EXPERIMENTS = ("spectrum", "code_table", "estimate", "redundancy", "risk_curve", "gram_check")

# stream tags for make_rng(seed, tag, ...)
_W, _VSTAR, _FIM, _DATA, _TRIALS = 0, 1, 2, 3, 4


@dataclass
class ExperimentConfig:
    experiment: str
    seed: Optional[int] = None
    d: int = 2
    m: int = 500
    n: int = 1000
    n_list: list[int] = field(default_factory=list)
    m_list: list[int] = field(default_factory=list)
    sigma2: float = 1.0
    alpha: float = 2.0
    lambda_order: Optional[float] = None
    D_override: Optional[int] = None
    trials: int = 200
    mc_samples: int = sp.DEFAULT_MC_SAMPLES
    renyi_samples: int = 20_000
    method: str = "auto"
    basis: str = "approx"
    output_path: Optional[str] = None
    dump_matrix: Optional[str] = None
    threads: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        if not self.alpha > 1:
            raise ConfigError("alpha must exceed 1")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        for name in ("d", "m", "n", "trials", "mc_samples", "renyi_samples", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if any(k < 1 for k in (*self.n_list, *self.m_list)):
            raise ConfigError("n_list and m_list entries must be positive")
        if self.D_override is not None and not 1 <= self.D_override <= self.m:
            raise ConfigError("D_override must lie in [1, m]")
        if self.method not in ("auto", "exhaustive", "nearest_plane"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.basis not in ("approx", "exact"):
            raise ConfigError("basis must be 'approx' or 'exact'")
        if self.lambda_order is not None and not 0 < self.lambda_order <= 1 - 1 / self.alpha:
            raise ConfigError("lambda_order must lie in (0, 1 - 1/alpha]")
        return self

    @property
    def D(self) -> int:
        return self.D_override if self.D_override is not None else self.d * (self.d + 3) // 2

    @property
    def order(self) -> float:
        return self.lambda_order if self.lambda_order is not None else 1.0 - 1.0 / self.alpha

    def echo(self) -> dict:
        """Config as embedded in artifacts; fields that cannot change results are omitted."""
        out = dataclasses.asdict(self)
        for k in ("output_path", "threads", "dump_matrix"):
            out.pop(k)
        out["lambda_order"] = self.order
        return out


# ---------------------------------------------------------------- outputs

def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, cfg: ExperimentConfig, columns, rows, notes: Optional[dict] = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# generated: {_timestamp()}\n")
        fh.write(f"# config: {json.dumps(cfg.echo(), sort_keys=True)}\n")
        for k, v in (notes or {}).items():
            fh.write(f"# {k}: {json.dumps(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> None:
    doc = {"generated": _timestamp(), "config": cfg.echo(), **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------- experiments

def _model(cfg: ExperimentConfig, m: Optional[int] = None) -> NetworkModel:
    m = cfg.m if m is None else m
    return NetworkModel(sample_weights(cfg.d, m, make_rng(cfg.seed, _W, m)), cfg.sigma2, cfg.seed)


def _directions(cfg, model, spectrum=None) -> CodedDirections:
    if cfg.basis == "exact":
        if spectrum is None:
            spectrum = sp.exact_spectrum(sp.monte_carlo_fim(model, cfg.mc_samples, make_rng(cfg.seed, _FIM)))
        dirs = CodedDirections.from_spectrum(spectrum, cfg.D)
        if np.any(dirs.lambdas <= 0):
            raise NumericalError("nonpositive eigenvalue among the coded directions; lower D")
        return dirs
    basis = sp.approx_basis(model)
    return CodedDirections.from_approx_basis(basis, sp.gram_report(basis))


def run_spectrum(cfg: ExperimentConfig, out: Path) -> None:
    model = _model(cfg)
    fim = sp.monte_carlo_fim(model, cfg.mc_samples, make_rng(cfg.seed, _FIM))
    if cfg.dump_matrix:
        sp.save_matrix(cfg.dump_matrix, fim.J)
    spec_ = sp.exact_spectrum(fim)
    D = cfg.D
    gram = None
    try:
        gram = sp.gram_report(sp.approx_basis(model))
    except MdlError as exc:
        log.warning("approximate basis unavailable: %s", exc)
    summary = sp.spectrum_summary(spec_, D, gram)
    lam = spec_.eigenvalues
    d = cfg.d
    theory = sp.approx_eigenvalues(d)
    groups = []
    for name, lo, hi, value in (("top", 0, 1, theory[0]), ("linear", 1, d + 1, 0.25),
                                ("quadratic", d + 1, d * (d + 3) // 2, 1 / (2 * math.pi * d))):
        if hi <= lam.size and hi > lo:
            groups.append({"group": name, "ranks": [lo + 1, hi], "theory": value,
                           "observed": lam[lo:hi].tolist(), "observed_mean": float(lam[lo:hi].mean())})
    summary.update(top_share=spec_.top_share(D), trace_theory=d / 2, groups=groups)
    write_json(out, cfg, summary)


def run_code_table(cfg: ExperimentConfig, out: Path) -> None:
    model = _model(cfg)
    dirs = _directions(cfg, model)
    code = build_code(dirs.lambdas, cfg.alpha, cfg.sigma2, cfg.n, dirs.radius)
    chk = length_bound_check(code)
    rows = [{
        "i": i + 1, "lambda": code.lambdas[i], "delta": code.deltas[i], "q": int(code.q[i]),
        "q_prime": int(code.q[i] - 1), "length_nats": code.lengths[i],
        "length_bits": code.lengths[i] / math.log(2), "c": code.c[i],
        "bound_slack": chk.slack[i], "bound_holds": bool(chk.holds[i]),
    } for i in range(code.D)]
    cols = ["i", "lambda", "delta", "q", "q_prime", "length_nats", "length_bits", "c",
            "bound_slack", "bound_holds"]
    write_csv(out, cfg, cols, rows, {"kraft_sum": kraft_sum(code), "radius": code.radius,
                                     "eps1": dirs.eps1})


def run_estimate(cfg: ExperimentConfig, out: Path) -> None:
    model = _model(cfg)
    vstar = sample_true_param(cfg.m, make_rng(cfg.seed, _VSTAR))
    dirs = _directions(cfg, model)
    code = build_code(dirs.lambdas, cfg.alpha, cfg.sigma2, cfg.n, dirs.radius)
    data = generate_dataset(model, vstar, cfg.n, make_rng(cfg.seed, _DATA, cfg.n))
    method = cfg.method
    est = fit(data, code, dirs, cfg.sigma2, method=method)
    payload = est.to_json()
    payload.update(
        v_ddot_norm=float(np.linalg.norm(est.v_ddot)),
        error_norm=float(np.linalg.norm(est.v_ddot - vstar.v)),
        description_length=l_alpha(data, code, dirs, cfg.sigma2, alpha=1.0, method=est.method),
        code=code.to_json(),
    )
    write_json(out, cfg, payload)


def _curve(cfg: ExperimentConfig, out: Path, with_risk: bool) -> None:
    model = _model(cfg)
    vstar = sample_true_param(cfg.m, make_rng(cfg.seed, _VSTAR))
    fim = sp.monte_carlo_fim(model, cfg.mc_samples, make_rng(cfg.seed, _FIM))
    spectrum = sp.exact_spectrum(fim)
    dirs = _directions(cfg, model, spectrum)
    top = spectrum.eigenvalues[:cfg.D]
    rcfg = RenyiConfig(cfg.order, cfg.renyi_samples, cfg.seed) if with_risk else None
    rows = []
    for n in (cfg.n_list or [cfg.n]):
        code = build_code(dirs.lambdas, cfg.alpha, cfg.sigma2, n, dirs.radius)
        res = simulate(model, vstar, code, dirs, cfg.trials, n, cfg.seed, rcfg,
                       method=cfg.method, threads=cfg.threads, stream=(_TRIALS, n))
        cor1 = cor1_rhs(top, spectrum.trace, cfg.alpha, cfg.sigma2, n) if np.all(top > 0) else None
        thm3 = (thm3_rhs(dirs.lambdas, spectrum.trace, cfg.alpha, cfg.sigma2, n, dirs.eps1)
                if cfg.basis == "approx" else None)
        row = risk_row(res, cfg.alpha, cfg.order, cfg.D, cor1, thm3)
        if not with_risk:
            row["risk_mean"] = row["risk_se"] = None
        rows.append(row)
        log.info("n=%d done", n)
    write_csv(out, cfg, RISK_CSV_COLUMNS, rows)


def run_gram_check(cfg: ExperimentConfig, out: Path) -> None:
    rows = []
    for m in (cfg.m_list or [cfg.m]):
        model = _model(cfg, m)
        g = sp.gram_report(sp.approx_basis(model))
        rows.append({"m": m, "D": g.G.shape[0], "eps1": g.eps1,
                     "gram_min_eig": g.gram_eigenvalues[0], "gram_max_eig": g.gram_eigenvalues[-1]})
    write_csv(out, cfg, ["m", "D", "eps1", "gram_min_eig", "gram_max_eig"], rows)


RUNNERS = {
    "spectrum": run_spectrum,
    "code_table": run_code_table,
    "estimate": run_estimate,
    "redundancy": lambda cfg, out: _curve(cfg, out, with_risk=False),
    "risk_curve": lambda cfg, out: _curve(cfg, out, with_risk=True),
    "gram_check": run_gram_check,
}

_DEFAULT_SUFFIX = {"spectrum": ".json", "estimate": ".json"}


def run(cfg: ExperimentConfig) -> Path:
    cfg.validate()
    out = Path(cfg.output_path or f"{cfg.experiment}{_DEFAULT_SUFFIX.get(cfg.experiment, '.csv')}")
    RUNNERS[cfg.experiment](cfg, out)
    return out


# ---------------------------------------------------------------- argument parsing

def _int_list(s: str) -> list[int]:
    return [int(float(t)) for t in s.replace(" ", "").split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdlrelu", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name.replace("_", "-"))
        s.add_argument("--config", type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", dest="output_path")
        s.add_argument("--threads", type=int)
        s.add_argument("--d", type=int)
        s.add_argument("--m", type=int)
        s.add_argument("--n", type=int)
        s.add_argument("--n-list", dest="n_list", type=_int_list)
        s.add_argument("--m-list", dest="m_list", type=_int_list)
        s.add_argument("--sigma2", type=float)
        s.add_argument("--alpha", type=float)
        s.add_argument("--lambda-order", dest="lambda_order", type=float)
        s.add_argument("--D", dest="D_override", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--mc-samples", dest="mc_samples", type=lambda s: int(float(s)))
        s.add_argument("--renyi-samples", dest="renyi_samples", type=lambda s: int(float(s)))
        s.add_argument("--method", choices=["auto", "exhaustive", "nearest_plane"])
        s.add_argument("--basis", choices=["approx", "exact"])
        s.add_argument("--dump-matrix", dest="dump_matrix")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    experiment = args.command.replace("-", "_")
    values: dict = {}
    if args.config is not None:
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        if raw.get("experiment", experiment).replace("-", "_") != experiment:
            raise ConfigError(f"config is for {raw['experiment']!r}, command is {experiment!r}")
        if "D" in raw and "D_override" not in raw:
            raw["D_override"] = raw.pop("D")
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values["experiment"] = experiment
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        cfg = config_from_args(args)
        cfg.validate()
    except (ConfigError, json.JSONDecodeError) as exc:
        log.error("invalid config: %s", exc)
        return 2
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return 4
    try:
        out = run(cfg)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return 2
    except (NumericalError, SearchBudgetError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 4
    log.info("wrote %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
