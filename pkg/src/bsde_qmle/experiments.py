"""Monte Carlo harness: replicated simulate-and-estimate runs and their summaries."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .drivers import DriverSpec, ThetaBox
from .errors import BsdeQmleError, ConfigError, DegenerateGamma, MetricUndefined
from .estimator import build_blocks, maximize_quasi_lik
from .rates import K_RANGE, L_RANGE, check_rate_conditions, schedule
from .sde_sim import ScenarioSpec, derive_seed, simulate_scenario

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec
    theta_box: ThetaBox
    n_set: Sequence[int]
    lk_pairs: Sequence[tuple]
    reps: int
    base_seed: int = 0
    outputs: str = "out"
    # estimation driver; defaults to the data-generating one
    driver: Optional[DriverSpec] = None
    allow_invalid_rates: bool = False

    def __post_init__(self):
        self.n_set = [int(n) for n in self.n_set]
        self.lk_pairs = [(int(l), int(k)) for l, k in self.lk_pairs]
        if not self.n_set:
            raise ConfigError("n_set must be non-empty", key="experiment.n_set")
        if not self.lk_pairs:
            raise ConfigError("lk_pairs must be non-empty", key="rates.lk_pairs")
        if self.reps < 0:
            raise ConfigError("reps must be non-negative", key="experiment.reps")
        if not self.allow_invalid_rates:
            for l, k in self.lk_pairs:
                ok, why = check_rate_conditions(l, k)
                if not ok:
                    raise ConfigError(f"(l={l}, k={k}) violates rate rules {why}", key="rates.lk_pairs")
        if self.driver is None:
            self.driver = self.scenario.driver
        if self.theta_box.dim != self.driver.d_theta:
            raise ConfigError("theta box dimension does not match the driver", key="experiment.theta_box")


@dataclass
class ReplicationResult:
    n: int
    l: int
    k: int
    rep_index: int
    theta_hat: np.ndarray
    converged: bool
    std_errors: np.ndarray
    seed: int
    h: float = math.nan
    c: int = 0
    gamma_hat: Optional[np.ndarray] = None
    error: str = ""


def replication_seed(base_seed: int, n: int, l: int, k: int, rep: int) -> int:
    return derive_seed(base_seed, n, l, k, rep)


def run_one(config: ExperimentConfig, n: int, l: int, k: int, rep: int) -> ReplicationResult:
    """One replication, reproducible from the config and its indices alone."""
    seed = replication_seed(config.base_seed, n, l, k, rep)
    sched = schedule(n, l, k)
    p = config.driver.d_theta
    try:
        obs = simulate_scenario(config.scenario, n, sched.h, seed)
        scheme = build_blocks(n, sched.c)
        res = maximize_quasi_lik(obs, scheme, config.driver, config.theta_box)
        return ReplicationResult(n, l, k, rep, res.theta_hat, res.converged, res.std_errors, seed,
                                 sched.h, sched.c, res.gamma_hat)
    except (BsdeQmleError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("replication n=%d l=%d k=%d rep=%d failed: %s", n, l, k, rep, exc)
        nan = np.full(p, np.nan)
        return ReplicationResult(n, l, k, rep, nan, False, nan.copy(), seed, sched.h, sched.c,
                                 None, f"{type(exc).__name__}: {exc}")


def run_replications(config: ExperimentConfig, threads: Optional[int] = None) -> list:
    """All (n, (l, k), rep) replications, ordered by (n, l, k, rep)."""
    tasks = [
        (n, l, k, rep)
        for n in sorted(config.n_set)
        for l, k in sorted(config.lk_pairs)
        for rep in range(config.reps)
    ]
    if not tasks:
        return []
    if threads is not None and threads <= 1:
        return [run_one(config, *t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: run_one(config, *t), tasks))


def _finite(results) -> list:
    return [r for r in results if np.all(np.isfinite(r.theta_hat))]


def error_table(results, theta0) -> dict:
    """Mean relative absolute error per (k, l) cell; ``None`` where blank.

    For vector parameters the relative error is averaged over components.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if np.any(theta0 == 0):
        raise MetricUndefined("relative error is undefined for a zero true parameter")
    cells = {}
    for r in _finite(results):
        err = float(np.mean(np.abs(r.theta_hat - theta0) / np.abs(theta0)))
        cells.setdefault((r.k, r.l), []).append(err)
    table = {}
    for k in K_RANGE:
        for l in L_RANGE:
            vals = cells.get((k, l))
            ok = check_rate_conditions(l, k)[0]
            table[k, l] = float(np.mean(vals)) if (vals and ok) else None
    return table


def mae_curve(results, theta0) -> list:
    """``[(n, MAE)]`` sorted by n, averaging over replications and components."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    groups = {}
    for r in _finite(results):
        groups.setdefault(r.n, []).append(np.abs(r.theta_hat - theta0))
    return [(n, float(np.mean(np.stack(groups[n])))) for n in sorted(groups)]


@dataclass
class NormalitySummary:
    n: int
    h: float
    reps: int
    mean: np.ndarray
    sd: np.ndarray
    ks_stat: np.ndarray
    samples: np.ndarray = field(repr=False)
    sd_convention: str = "sample (n-1 denominator)"


def _sym_sqrt(gamma: np.ndarray) -> np.ndarray:
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if gamma.shape[0] != gamma.shape[1] or not np.allclose(gamma, gamma.T, rtol=1e-10, atol=1e-14):
        raise DegenerateGamma("gamma must be a symmetric square matrix")
    vals, vecs = np.linalg.eigh(gamma)
    if not np.all(np.isfinite(vals)) or vals.min() <= 0:
        raise DegenerateGamma("gamma is not positive definite")
    return (vecs * np.sqrt(vals)) @ vecs.T


def normality_summary(results, gamma, theta0, n: int, h: float) -> NormalitySummary:
    """Standardise ``Gamma^{1/2} sqrt(n h) (theta_hat - theta0)`` and compare with N(0, I)."""
    root = _sym_sqrt(gamma)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    est = np.array([r.theta_hat for r in _finite(results)], dtype=float).reshape(-1, theta0.size)
    s = math.sqrt(n * h) * (est - theta0) @ root.T
    m = s.shape[0]
    p = theta0.size
    if m == 0:
        nan = np.full(p, np.nan)
        return NormalitySummary(n, h, 0, nan, nan.copy(), nan.copy(), s)
    mean = s.mean(axis=0)
    sd = s.std(axis=0, ddof=1) if m > 1 else np.full(p, np.nan)
    ks = np.array([stats.kstest(s[:, j], "norm").statistic for j in range(p)])
    return NormalitySummary(n, h, m, mean, sd, ks, s)


def analytic_gamma(scenario: ScenarioSpec, driver: DriverSpec) -> Optional[np.ndarray]:
    """Closed-form information matrix where one is known, else ``None``.

    vasicek_sqrt on its own scenario: the integrand (|x|+0.1)/(|x|+0.1) is 1.
    heston_price: the theta-Jacobian sqrt(x) chol(z) does not involve mu and
    chol(z)' z^{-1} chol(z) = I, so Gamma = E[nu] I with CIR stationary mean
    ``beta``.
    """
    if scenario.name == "vasicek_1d" and driver.name == "vasicek_sqrt":
        return np.eye(1)
    if scenario.name == "heston_2d" and driver.name == "heston_price":
        return float(scenario.factor_params["beta"]) * np.eye(2)
    return None


def _fmt(v) -> str:
    if v is None:
        return ""
    return format(float(v), ".17g")


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling and rename so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def error_table_csv(table: dict) -> str:
    lines = ["k," + ",".join(str(l) for l in L_RANGE)]
    for k in K_RANGE:
        lines.append(f"{k}," + ",".join(_fmt(table[k, l]) for l in L_RANGE))
    return "\n".join(lines) + "\n"


def mae_curve_csv(curve) -> str:
    return "n,mae\n" + "".join(f"{n},{_fmt(v)}\n" for n, v in curve)


def replications_csv(results) -> str:
    p = max((np.size(r.theta_hat) for r in results), default=0)
    head = ["n", "l", "k", "rep_index", "seed", "h", "c", "converged"]
    head += [f"theta_hat_{j + 1}" for j in range(p)] + [f"std_error_{j + 1}" for j in range(p)]
    lines = [",".join(head + ["error"])]
    for r in results:
        row = [str(r.n), str(r.l), str(r.k), str(r.rep_index), str(r.seed), _fmt(r.h), str(r.c),
               str(int(r.converged))]
        row += [_fmt(v) for v in np.atleast_1d(r.theta_hat)]
        row += [_fmt(v) for v in np.atleast_1d(r.std_errors)]
        row.append(r.error.replace(",", ";").replace("\n", " "))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def normality_rows(results, gamma, theta0) -> list:
    """One NormalitySummary per (n, l, k) group, in sorted order."""
    groups = {}
    for r in results:
        groups.setdefault((r.n, r.l, r.k), []).append(r)
    out = []
    for (n, l, k), grp in sorted(groups.items()):
        out.append(((n, l, k), normality_summary(grp, gamma, theta0, n, schedule(n, l, k).h)))
    return out


def normality_csv(rows) -> str:
    lines = ["n,l,k,component,mean,sd,ks_stat,reps"]
    for (n, l, k), s in rows:
        for j in range(np.size(s.mean)):
            lines.append(f"{n},{l},{k},{j + 1},{_fmt(s.mean[j])},{_fmt(s.sd[j])},{_fmt(s.ks_stat[j])},{s.reps}")
    return "\n".join(lines) + "\n"


def write_outputs(out_dir, resolved_cfg: dict, config: ExperimentConfig, results, notes=()) -> dict:
    """Write the CSV tables and ``run_meta.json``; returns the path of each file."""
    from . import __version__

    out_dir = Path(out_dir)
    theta0 = config.scenario.theta0
    paths = {}
    files = {
        "replications.csv": replications_csv(results),
        "mae_curve.csv": mae_curve_csv(mae_curve(results, theta0)),
    }
    meta_notes = list(notes)
    try:
        files["error_table.csv"] = error_table_csv(error_table(results, theta0))
    except MetricUndefined as exc:
        meta_notes.append(f"error_table skipped: {exc}")
    gamma = resolved_cfg.get("experiment", {}).get("gamma")
    gamma_source = "config"
    if gamma is None:
        gamma = analytic_gamma(config.scenario, config.driver)
        gamma_source = "analytic"
    if gamma is None:
        hats = [r.gamma_hat for r in results if r.gamma_hat is not None]
        gamma = np.mean(hats, axis=0) if hats else None
        gamma_source = "mean plug-in estimate"
    if gamma is not None and results:
        try:
            files["normality.csv"] = normality_csv(normality_rows(results, gamma, theta0))
        except DegenerateGamma as exc:
            meta_notes.append(f"normality skipped: {exc}")
    meta = {
        "config": resolved_cfg,
        "version": __version__,
        "sd_convention": "sample (n-1 denominator)",
        "gamma": np.atleast_2d(gamma).tolist() if gamma is not None else None,
        "gamma_source": gamma_source,
        "rate_bound_note": "k <= 2l - 20 is treated as inclusive",
        "replications": len(results),
        "failed": sum(1 for r in results if r.error),
        "notes": meta_notes,
    }
    files["run_meta.json"] = json.dumps(meta, indent=2, sort_keys=True) + "\n"
    for name, text in files.items():
        atomic_write_text(out_dir / name, text)
        paths[name] = out_dir / name
    return paths
