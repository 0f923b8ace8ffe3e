"""Seeded simulation of the observed factor X and the forward-integrated Y."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .drivers import DriverSpec, builtin_driver
from .errors import ConfigError, DimError, SimulationBlowup

SCENARIOS = ("vasicek_1d", "heston_2d", "constant_vol")

HESTON_VOL = np.array([[0.4, 0.0], [0.4, 0.4]])


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; normals come from numpy's ziggurat sampler."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed, independent of call order elsewhere."""
    words = [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    state = np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass
class ObservationRecord:
    n: int
    h: float
    x_path: np.ndarray
    y_path: np.ndarray
    seed: int = 0
    scenario_name: str = "custom"

    def __post_init__(self):
        self.x_path = np.asarray(self.x_path, dtype=float)
        self.y_path = np.asarray(self.y_path, dtype=float)
        if self.y_path.ndim == 1:
            self.y_path = self.y_path[:, None]
        if self.x_path.ndim == 1:
            self.x_path = self.x_path.reshape(-1, 1) if self.x_path.size else np.empty((self.n + 1, 0))
        if self.n < 1 or not self.h > 0:
            raise ConfigError("observation record needs n >= 1 and h > 0")
        if self.y_path.shape[0] != self.n + 1 or self.x_path.shape[0] != self.n + 1:
            raise DimError(
                f"paths must have n+1={self.n + 1} rows, got "
                f"{self.x_path.shape[0]} and {self.y_path.shape[0]}"
            )
        if not (np.all(np.isfinite(self.x_path)) and np.all(np.isfinite(self.y_path))):
            raise ConfigError("observation record contains non-finite values")

    @property
    def d_x(self) -> int:
        return self.x_path.shape[1]

    @property
    def d_y(self) -> int:
        return self.y_path.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h


def simulate_vasicek_exact(a, b, sigma, x0, n, h, rng) -> np.ndarray:
    """Exact Gaussian transitions of dX = a(b - X)dt + sigma dW."""
    if not a > 0 or not h > 0:
        raise ConfigError("Vasicek simulation needs a > 0 and h > 0")
    xi = rng.standard_normal(n)
    return _vasicek_from_normals(a, b, sigma, x0, h, xi)


def _vasicek_from_normals(a, b, sigma, x0, h, xi) -> np.ndarray:
    phi = math.exp(-a * h)
    scale = sigma * math.sqrt(-math.expm1(-2.0 * a * h) / (2.0 * a))
    # AR(1) recursion u_k = phi * u_{k-1} + scale * xi_k on the deviation from b
    dev = lfilter([1.0], [1.0, -phi], scale * xi, zi=[phi * (x0 - b)])[0]
    return np.concatenate(([float(x0)], b + dev))


def simulate_cir_full_truncation(L, beta, sigma, nu0, n, h, rng) -> np.ndarray:
    """Full-truncation Euler scheme for d(nu) = L(beta - nu)dt + sigma sqrt(nu) dW."""
    if nu0 < 0:
        raise ConfigError("CIR initial value must be non-negative")
    if not L > 0 or not beta > 0 or sigma < 0 or not h > 0:
        raise ConfigError("CIR simulation needs L > 0, beta > 0, sigma >= 0, h > 0")
    xi = rng.standard_normal(n)
    return _cir_from_normals(L, beta, sigma, nu0, h, xi)


def _cir_from_normals(L, beta, sigma, nu0, h, xi) -> np.ndarray:
    out = [float(nu0)] * (len(xi) + 1)
    nu = float(nu0)
    sq_h = math.sqrt(h)
    sqrt = math.sqrt
    for k, z in enumerate(xi.tolist(), start=1):
        pos = nu if nu > 0.0 else 0.0
        nu = nu + L * (beta - pos) * h + sigma * sqrt(pos) * sq_h * z
        out[k] = nu
    return np.asarray(out)


@dataclass
class ScenarioSpec:
    """Data-generating process for one synthetic observation record.

    ``vol_matrix`` is the constant V for ``heston_2d`` and ``constant_vol``;
    ``vasicek_1d`` uses V = sqrt(|x| + 0.1) instead.
    """

    name: str
    driver: DriverSpec
    theta0: np.ndarray
    y0: np.ndarray
    factor_params: Mapping[str, float] = field(default_factory=dict)
    vol_matrix: Optional[np.ndarray] = None
    substeps: int = 1
    shared_noise: bool = False

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.name!r}", key="scenario.name")
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        self.factor_params = dict(self.factor_params)
        if self.vol_matrix is not None:
            self.vol_matrix = np.atleast_2d(np.asarray(self.vol_matrix, dtype=float))
        if int(self.substeps) < 1:
            raise ConfigError("substeps must be a positive integer", key="scenario.substeps")
        self.substeps = int(self.substeps)
        d = self.driver
        if self.theta0.size != d.d_theta:
            raise DimError("theta0 length does not match the driver")
        if self.y0.size != d.d_y:
            raise DimError("y0 length does not match the driver")
        if self.name == "vasicek_1d":
            if d.d_y != 1 or d.d_x != 1:
                raise DimError("vasicek_1d needs a driver with d_x = d_y = 1")
            for key in ("a", "b", "sigma", "x0"):
                if key not in self.factor_params:
                    raise ConfigError(f"missing factor parameter {key!r}", key=f"scenario.factor_params.{key}")
        elif self.name == "heston_2d":
            if self.vol_matrix is None:
                self.vol_matrix = HESTON_VOL.copy()
            if d.d_x != 1 or self.vol_matrix.shape[0] != d.d_y:
                raise DimError("heston_2d needs d_x = 1 and a d_y-row volatility")
            for key in ("L", "beta", "sigma", "nu0"):
                if key not in self.factor_params:
                    raise ConfigError(f"missing factor parameter {key!r}", key=f"scenario.factor_params.{key}")
        else:
            if self.vol_matrix is None:
                raise ConfigError("constant_vol needs a volatility matrix", key="scenario.vol_matrix")
            if d.d_x != 0 or self.vol_matrix.shape[0] != d.d_y:
                raise DimError("constant_vol needs d_x = 0 and a d_y-row volatility")

    @property
    def d_w(self) -> int:
        return 1 if self.name == "vasicek_1d" else self.vol_matrix.shape[1]

    def volatility(self, x_path: np.ndarray) -> np.ndarray:
        """V_t along a factor path, shape ``(len, d_y, d_w)``."""
        m = x_path.shape[0]
        if self.name == "vasicek_1d":
            return np.sqrt(np.abs(x_path[:, 0]) + 0.1)[:, None, None]
        return np.broadcast_to(self.vol_matrix, (m,) + self.vol_matrix.shape)


def vasicek_1d_scenario(theta0=1.0, a=2.0, b=0.3, sigma=0.025, x0=0.3, y0=1.0,
                        substeps=1, shared_noise=False) -> ScenarioSpec:
    return ScenarioSpec(
        "vasicek_1d", builtin_driver("vasicek_sqrt"), [theta0], [y0],
        {"a": a, "b": b, "sigma": sigma, "x0": x0},
        substeps=substeps, shared_noise=shared_noise,
    )


def heston_2d_scenario(theta0=(5.0, 5.0), mu=0.0, L=1.0, beta=1.5, sigma=0.5, nu0=1.5,
                       y0=(1.0, 1.0), vol_matrix=HESTON_VOL, substeps=1) -> ScenarioSpec:
    return ScenarioSpec(
        "heston_2d", builtin_driver("heston_price", {"mu": mu}), theta0, y0,
        {"L": L, "beta": beta, "sigma": sigma, "nu0": nu0},
        vol_matrix=vol_matrix, substeps=substeps,
    )


def constant_vol_scenario(vol_matrix, driver: Optional[DriverSpec] = None, theta0=None,
                          y0=None, substeps=1) -> ScenarioSpec:
    vol = np.atleast_2d(np.asarray(vol_matrix, dtype=float))
    d_y = vol.shape[0]
    if driver is None:
        driver = builtin_driver("zero", {"d_y": d_y})
    if theta0 is None:
        theta0 = np.zeros(driver.d_theta)
    if y0 is None:
        y0 = np.zeros(d_y)
    return ScenarioSpec("constant_vol", driver, theta0, y0, vol_matrix=vol, substeps=substeps)


def euler_y(driver: DriverSpec, theta, x_fine, v_fine, y0, dw, delta) -> np.ndarray:
    """Forward Euler for dY = psi(X, Y, V V^T, theta) dt + V dW on a fine grid.

    ``x_fine`` has one more row than ``dw``; ``v_fine`` holds V at every fine
    grid point.  Returns the Y path with ``len(dw) + 1`` rows.
    """
    theta = np.asarray(theta, dtype=float)
    dw = np.asarray(dw, dtype=float)
    steps = dw.shape[0]
    v = v_fine[:steps]
    z = v @ np.swapaxes(v, -1, -2)
    noise = np.einsum("kij,kj->ki", v, dw)
    y0 = np.asarray(y0, dtype=float)
    x = x_fine[:steps]
    with np.errstate(over="ignore", invalid="ignore"):
        if not driver.depends_on_y:
            placeholder = np.broadcast_to(y0, (steps, y0.size))
            incr = driver.eval(x, placeholder, z, theta) * delta + noise
            path = np.empty((steps + 1, y0.size))
            path[0] = y0
            np.cumsum(incr, axis=0, out=path[1:])
            path[1:] += y0
        else:
            path = np.empty((steps + 1, y0.size))
            path[0] = y0
            cur = y0.copy()
            for k in range(steps):
                cur = cur + driver.eval(x[k], cur, z[k], theta) * delta + noise[k]
                path[k + 1] = cur
                if not np.all(np.isfinite(cur)):
                    raise SimulationBlowup(f"non-finite Y at fine step {k + 1}", step=k + 1)
    bad = ~np.all(np.isfinite(path), axis=1)
    if bad.any():
        step = int(np.argmax(bad))
        raise SimulationBlowup(f"non-finite Y at fine step {step}", step=step)
    return path


def simulate_scenario(spec: ScenarioSpec, n: int, h: float, seed: int) -> ObservationRecord:
    """Simulate ``n`` observation intervals of length ``h``.

    The factor is drawn first from the seeded stream, then the Wiener
    increments driving Y, so the record is a pure function of its inputs.
    """
    if n < 1 or not h > 0:
        raise ConfigError("simulation needs n >= 1 and h > 0")
    rng = make_rng(seed)
    sub = spec.substeps
    steps = n * sub
    delta = h / sub
    fp = spec.factor_params
    if spec.name == "vasicek_1d":
        xi = rng.standard_normal(steps)
        x_fine = _vasicek_from_normals(fp["a"], fp["b"], fp["sigma"], fp["x0"], delta, xi)[:, None]
        if spec.shared_noise:
            dw = (xi * math.sqrt(delta))[:, None]
        else:
            dw = rng.standard_normal((steps, 1)) * math.sqrt(delta)
    elif spec.name == "heston_2d":
        x_fine = simulate_cir_full_truncation(
            fp["L"], fp["beta"], fp["sigma"], fp["nu0"], steps, delta, rng
        )[:, None]
        dw = rng.standard_normal((steps, spec.d_w)) * math.sqrt(delta)
    else:
        x_fine = np.empty((steps + 1, 0))
        dw = rng.standard_normal((steps, spec.d_w)) * math.sqrt(delta)
    if not np.all(np.isfinite(x_fine)):
        step = int(np.argmax(~np.all(np.isfinite(x_fine), axis=1)))
        raise SimulationBlowup(f"non-finite factor at fine step {step}", step=step)
    v_fine = spec.volatility(x_fine)
    y_fine = euler_y(spec.driver, spec.theta0, x_fine, v_fine, spec.y0, dw, delta)
    return ObservationRecord(
        n=n, h=float(h), x_path=x_fine[::sub], y_path=y_fine[::sub],
        seed=int(seed), scenario_name=spec.name,
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_observation_csv(obs: ObservationRecord, path) -> None:
    """Write ``k,t,x_1..x_dx,y_1..y_dy`` rows with 17 significant digits."""
    header = ["k", "t"] + [f"x_{i + 1}" for i in range(obs.d_x)] + [f"y_{i + 1}" for i in range(obs.d_y)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(obs.n + 1):
            row = [str(k), _fmt(k * obs.h)]
            row += [_fmt(v) for v in obs.x_path[k]]
            row += [_fmt(v) for v in obs.y_path[k]]
            w.writerow(row)


def read_observation_csv(path, h: Optional[float] = None, scenario_name: str = "csv") -> ObservationRecord:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if header[:2] != ["k", "t"]:
        raise ConfigError(f"{path}: header must start with 'k,t'")
    data = np.array(rows, dtype=float)
    x_cols = [i for i, name in enumerate(header) if name.startswith("x_")]
    y_cols = [i for i, name in enumerate(header) if name.startswith("y_")]
    if not y_cols:
        raise ConfigError(f"{path}: no y_ columns")
    n = data.shape[0] - 1
    if h is None:
        if n < 1:
            raise ConfigError(f"{path}: need at least two rows")
        h = float(data[1, 1] - data[0, 1])
    return ObservationRecord(
        n=n, h=h, x_path=data[:, x_cols] if x_cols else np.empty((n + 1, 0)),
        y_path=data[:, y_cols], scenario_name=scenario_name,
    )


def scenario_from_config(cfg: Mapping, driver_cfg: Optional[Mapping] = None) -> ScenarioSpec:
    """Build a ScenarioSpec from the ``scenario`` (and ``driver``) config sections."""
    if "name" not in cfg:
        raise ConfigError("scenario.name is required", key="scenario.name")
    name = cfg["name"]
    fp = dict(cfg.get("factor_params", {}))
    allowed = {"vasicek_1d": {"a", "b", "sigma", "x0"}, "heston_2d": {"L", "beta", "sigma", "nu0"}}
    extra = set(fp) - allowed.get(name, set())
    if extra:
        raise ConfigError(f"unknown factor parameter(s) {sorted(extra)}", key="scenario.factor_params")
    substeps = cfg.get("substeps", 1)
    if name == "vasicek_1d":
        defaults = {"a": 2.0, "b": 0.3, "sigma": 0.025, "x0": 0.3}
        defaults.update(fp)
        return vasicek_1d_scenario(
            theta0=_scalar(cfg.get("theta0", 1.0)), y0=_scalar(cfg.get("y0", 1.0)),
            substeps=substeps, shared_noise=bool(cfg.get("shared_noise", False)), **defaults,
        )
    if name == "heston_2d":
        defaults = {"L": 1.0, "beta": 1.5, "sigma": 0.5, "nu0": 1.5}
        defaults.update(fp)
        mu = (driver_cfg or {}).get("params", {}).get("mu", cfg.get("mu", 0.0))
        return heston_2d_scenario(
            theta0=cfg.get("theta0", (5.0, 5.0)), mu=mu, y0=cfg.get("y0", (1.0, 1.0)),
            vol_matrix=cfg.get("vol_matrix", HESTON_VOL), substeps=substeps, **defaults,
        )
    if name == "constant_vol":
        if "vol_matrix" not in cfg:
            raise ConfigError("constant_vol requires scenario.vol_matrix", key="scenario.vol_matrix")
        driver = None
        if driver_cfg:
            driver = builtin_driver(driver_cfg.get("name", "zero"), driver_cfg.get("params", {}))
        return constant_vol_scenario(cfg["vol_matrix"], driver, cfg.get("theta0"), cfg.get("y0"), substeps)
    raise ConfigError(f"unknown scenario {name!r}", key="scenario.name")


def _scalar(v) -> float:
    if isinstance(v, Sequence) and not isinstance(v, str):
        return float(v[0])
    return float(v)
