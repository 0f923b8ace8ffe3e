"""Driver functions psi(x, y, z, theta) for the drift of the observed process.

All driver callables are vectorised over leading axes: ``x`` has shape
``(..., d_x)``, ``y`` shape ``(..., d_y)``, ``z`` shape ``(..., d_y, d_y)``
and ``theta`` shape ``(d_theta,)``.  ``eval`` returns ``(..., d_y)`` and
``jacobian_theta`` returns ``(..., d_y, d_theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigError, DegenerateZ, DimError, UnknownDriver

DriverFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

BUILTIN_DRIVERS = ("zero", "linear", "vasicek_sqrt", "heston_price")


@dataclass(frozen=True)
class ThetaBox:
    """Closed parameter box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("theta box bounds must be vectors of equal length", key="theta_box")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("theta box must be bounded", key="theta_box")
        if not np.all(lo < hi):
            raise ConfigError("theta box needs lower < upper componentwise", key="theta_box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def on_boundary(self, theta, rtol: float = 1e-10) -> bool:
        theta = np.asarray(theta, dtype=float)
        tol = rtol * (1.0 + np.abs(self.upper - self.lower))
        return bool(np.any(theta - self.lower <= tol) or np.any(self.upper - theta <= tol))


@dataclass(frozen=True)
class DriverSpec:
    name: str
    d_x: int
    d_y: int
    d_theta: int
    depends_on_y: bool
    eval: DriverFn
    jacobian_theta: Optional[DriverFn] = None
    fixed_params: Mapping[str, object] = field(default_factory=dict)
    reads_z: bool = False
    # True when psi is affine in theta, so the second theta-derivative vanishes.
    linear_in_theta: bool = False

    def __post_init__(self):
        if self.d_x < 0 or self.d_y < 1 or self.d_theta < 1:
            raise ConfigError(f"bad driver dimensions for {self.name!r}", key="driver")
        object.__setattr__(self, "fixed_params", MappingProxyType(dict(self.fixed_params)))

    def __call__(self, x, y, z, theta) -> np.ndarray:
        return self.eval(x, y, z, np.asarray(theta, dtype=float))


def _fd_jacobian(driver: DriverSpec, x, y, z, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        step = 1e-6 * (1.0 + abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += step
        tm[j] -= step
        cols.append((driver.eval(x, y, z, tp) - driver.eval(x, y, z, tm)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def _check_spd(z) -> None:
    z = np.asarray(z, dtype=float)
    try:
        np.linalg.cholesky(z)
    except np.linalg.LinAlgError as exc:
        raise DegenerateZ("z is not positive definite") from exc


def eval_driver_jacobian(driver: DriverSpec, x, y, z, theta) -> np.ndarray:
    """Theta-Jacobian of the driver, shape ``(..., d_y, d_theta)``.

    Uses the analytic Jacobian when the driver provides one and central
    finite differences with step ``1e-6 * (1 + |theta_j|)`` otherwise.
    """
    if driver.reads_z:
        _check_spd(z)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (driver.d_theta,):
        raise DimError(f"theta has shape {theta.shape}, driver expects ({driver.d_theta},)")
    if driver.jacobian_theta is not None:
        return driver.jacobian_theta(x, y, z, theta)
    return _fd_jacobian(driver, x, y, z, theta)


def _lead_shape(y) -> tuple:
    return np.shape(y)[:-1]


def _zero_driver(params) -> DriverSpec:
    d_y = int(params.get("d_y", 1))
    d_theta = int(params.get("d_theta", 1))
    d_x = int(params.get("d_x", 0))

    def f(x, y, z, theta):
        return np.zeros(_lead_shape(y) + (d_y,))

    def jac(x, y, z, theta):
        return np.zeros(_lead_shape(y) + (d_y, d_theta))

    return DriverSpec("zero", d_x, d_y, d_theta, False, f, jac, dict(params), linear_in_theta=True)


def _linear_driver(params) -> DriverSpec:
    if "regressor" not in params:
        raise ConfigError("linear driver requires a 'regressor'", key="driver.params.regressor")
    reg = params["regressor"]
    if callable(reg):
        try:
            d_y = int(params["d_y"])
            d_theta = int(params["d_theta"])
        except KeyError as exc:
            raise ConfigError(
                f"callable regressor requires {exc.args[0]!r}", key=f"driver.params.{exc.args[0]}"
            ) from None
        d_x = int(params.get("d_x", 0))
        depends_on_y = bool(params.get("depends_on_y", True))
        reads_z = bool(params.get("reads_z", True))

        def regressor(x, y, z):
            return np.asarray(reg(x, y, z), dtype=float)

    else:
        g = np.asarray(reg, dtype=float)
        if g.ndim == 0:
            g = g.reshape(1, 1)
        elif g.ndim == 1:
            g = g.reshape(1, -1)
        if g.ndim != 2:
            raise ConfigError("constant regressor must be a matrix", key="driver.params.regressor")
        d_y, d_theta = g.shape
        d_x = int(params.get("d_x", 0))
        depends_on_y = False
        reads_z = False

        def regressor(x, y, z):
            return np.broadcast_to(g, _lead_shape(y) + g.shape)

    def f(x, y, z, theta):
        return regressor(x, y, z) @ theta

    def jac(x, y, z, theta):
        return np.array(regressor(x, y, z), dtype=float)

    return DriverSpec(
        "linear", d_x, d_y, d_theta, depends_on_y, f, jac, dict(params),
        reads_z=reads_z, linear_in_theta=True,
    )


def _vasicek_sqrt_driver(params) -> DriverSpec:
    offset = float(params.get("offset", 0.1))

    def scale(x):
        return np.sqrt(np.abs(x[..., 0]) + offset)

    def f(x, y, z, theta):
        return (theta[0] * scale(np.asarray(x, dtype=float)))[..., None]

    def jac(x, y, z, theta):
        return scale(np.asarray(x, dtype=float))[..., None, None]

    return DriverSpec(
        "vasicek_sqrt", 1, 1, 1, False, f, jac, {"offset": offset}, linear_in_theta=True
    )


def _heston_price_driver(params) -> DriverSpec:
    if "mu" not in params:
        raise ConfigError("heston_price driver requires 'mu'", key="driver.params.mu")
    mu = float(params["mu"])

    def loading(x, z):
        # sqrt of the positive part keeps the driver defined for a truncated CIR state.
        x = np.asarray(x, dtype=float)
        try:
            chol = np.linalg.cholesky(np.asarray(z, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise DegenerateZ("heston_price needs a positive definite z") from exc
        return np.sqrt(np.maximum(x[..., 0], 0.0))[..., None, None] * chol

    def f(x, y, z, theta):
        return mu * np.asarray(y, dtype=float) + loading(x, z) @ theta

    def jac(x, y, z, theta):
        return loading(x, z)

    return DriverSpec(
        "heston_price", 1, 2, 2, mu != 0.0, f, jac, {"mu": mu},
        reads_z=True, linear_in_theta=True,
    )


_FACTORIES = {
    "zero": _zero_driver,
    "linear": _linear_driver,
    "vasicek_sqrt": _vasicek_sqrt_driver,
    "heston_price": _heston_price_driver,
}


def builtin_driver(name: str, params: Optional[Mapping[str, object]] = None) -> DriverSpec:
    """Construct one of the built-in drivers by name.

    ``zero``          psi = 0 (``d_y``, ``d_theta``, ``d_x`` optional)
    ``linear``        psi = G(x, y, z) theta; ``regressor`` is a constant
                      matrix or a callable with ``d_y`` and ``d_theta`` given
    ``vasicek_sqrt``  psi = theta * sqrt(|x| + 0.1)
    ``heston_price``  psi = mu * y + sqrt(x) * chol(z) theta; requires ``mu``
    """
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise UnknownDriver(f"unknown driver {name!r}; choose from {BUILTIN_DRIVERS}") from None
    return factory(dict(params or {}))
