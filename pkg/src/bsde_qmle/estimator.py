"""Block realized-covariance quasi-likelihood for the driver parameter.

The observation grid is cut into ``L = n // c`` blocks of ``c`` intervals.
Block ``l`` yields a realized covariance ``Zhat_l`` from its own increments,
and the drift residual of block ``l`` is weighted by ``Zhat_{l-1}``::

    H(theta) = -1/2 sum_{l=1}^{L-1} r_l' Zhat_{l-1}^{-1} r_l / (c h)
    r_l      = (Y_{c(l+1)} - Y_{cl}) - c h psi(X_{cl}, Y_{cl}, Zhat_{l-1}, theta)

Blocks whose ``Zhat_{l-1}`` is numerically singular are skipped.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .drivers import DriverSpec, ThetaBox, eval_driver_jacobian
from .errors import (
    AllDegenerate,
    ConfigError,
    DimError,
    InsufficientData,
    OptFailure,
    SingularSystem,
)
from .sde_sim import ObservationRecord

log = logging.getLogger(__name__)

DET_RTOL = 1e-12


@dataclass(frozen=True)
class BlockScheme:
    n: int
    c: int

    @property
    def L(self) -> int:
        return self.n // self.c

    def anchor(self, l: int) -> int:
        """Global observation index of the first point of block ``l``."""
        return self.c * l

    def within(self, l: int, m: int) -> int:
        return m + self.c * l


def build_blocks(n: int, c: int) -> BlockScheme:
    if c < 1:
        raise ConfigError("block size c must be a positive integer", key="c")
    if n < 2 * c:
        raise InsufficientData(f"n={n} gives fewer than two blocks of size c={c}")
    return BlockScheme(int(n), int(c))


@dataclass
class RealizedBlockCov:
    l: int
    z_hat: np.ndarray
    degenerate: bool
    chol_factor: Optional[np.ndarray] = None


def _is_degenerate(z: np.ndarray) -> np.ndarray:
    """Relative determinant test, vectorised over a stack of matrices."""
    d = z.shape[-1]
    tr = np.trace(z, axis1=-2, axis2=-1)
    det = np.linalg.det(z)
    with np.errstate(invalid="ignore"):
        floor = DET_RTOL * np.power(np.maximum(tr, 0.0) / d, d)
        return ~((tr > 0) & (det > floor))


def _cholesky_stack(z: np.ndarray, degenerate: np.ndarray):
    """Lower Cholesky factors; blocks failing the factorisation become degenerate."""
    chol = np.full_like(z, np.nan)
    ok = ~degenerate
    if ok.any():
        try:
            chol[ok] = np.linalg.cholesky(z[ok])
        except np.linalg.LinAlgError:
            for i in np.flatnonzero(ok):
                try:
                    chol[i] = np.linalg.cholesky(z[i])
                except np.linalg.LinAlgError:
                    degenerate[i] = True
    return chol, degenerate


def _block_increments(obs: ObservationRecord, scheme: BlockScheme) -> np.ndarray:
    c, L = scheme.c, scheme.L
    return np.diff(obs.y_path[: c * L + 1], axis=0).reshape(L, c, obs.d_y)


def realized_block_cov(obs: ObservationRecord, scheme: BlockScheme, l: int) -> RealizedBlockCov:
    if not 0 <= l < scheme.L:
        raise IndexError(f"block index {l} outside 0..{scheme.L - 1}")
    c = scheme.c
    start = scheme.within(l, 0)
    dy = np.diff(obs.y_path[start: start + c + 1], axis=0)
    z = dy.T @ dy / (c * obs.h)
    degenerate = _is_degenerate(z[None])
    chol, degenerate = _cholesky_stack(z[None], degenerate)
    deg = bool(degenerate[0])
    return RealizedBlockCov(l, z, deg, None if deg else chol[0])


@dataclass
class BlockData:
    """Per-block quantities shared by every likelihood evaluation.

    Arrays indexed by ``j = l - 1`` for the summands ``l = 1..L-1`` hold the
    anchor state, the block increment and the previous block's covariance.
    """

    scheme: BlockScheme
    h: float
    z_hat: np.ndarray
    degenerate: np.ndarray
    chol: np.ndarray
    x_anchor: np.ndarray
    y_anchor: np.ndarray
    delta_y: np.ndarray
    used: np.ndarray

    @property
    def ch(self) -> float:
        return self.scheme.c * self.h

    @property
    def n_used(self) -> int:
        return int(self.used.size)

    @property
    def n_dropped(self) -> int:
        return self.scheme.L - 1 - self.n_used


def prepare_blocks(obs: ObservationRecord, scheme: BlockScheme) -> BlockData:
    if scheme.n > obs.n:
        raise DimError(f"scheme expects n={scheme.n} but record has n={obs.n}")
    c, L = scheme.c, scheme.L
    dy = _block_increments(obs, scheme)
    z = np.einsum("lmi,lmj->lij", dy, dy) / (c * obs.h)
    # exact symmetry; einsum already gives it, this guards summation order
    z = 0.5 * (z + np.swapaxes(z, -1, -2))
    degenerate = _is_degenerate(z)
    chol, degenerate = _cholesky_stack(z, degenerate)
    idx = c * np.arange(1, L + 1)
    anchors = idx[:-1]
    used = np.flatnonzero(~degenerate[:-1])
    return BlockData(
        scheme=scheme,
        h=obs.h,
        z_hat=z,
        degenerate=degenerate,
        chol=chol,
        x_anchor=obs.x_path[anchors],
        y_anchor=obs.y_path[anchors],
        delta_y=obs.y_path[idx[1:]] - obs.y_path[anchors],
        used=used,
    )


@dataclass
class QuasiLikEval:
    value: float
    gradient: Optional[np.ndarray]
    hessian: Optional[np.ndarray]
    dropped_blocks: int
    used_blocks: int


def _check_dims(obs_dx, obs_dy, driver: DriverSpec, theta: np.ndarray) -> None:
    if driver.d_y != obs_dy or driver.d_x != obs_dx:
        raise DimError(
            f"driver {driver.name!r} expects d_x={driver.d_x}, d_y={driver.d_y}; "
            f"data has d_x={obs_dx}, d_y={obs_dy}"
        )
    if theta.shape != (driver.d_theta,):
        raise DimError(f"theta must have length {driver.d_theta}")


def _tri_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``chol @ out = rhs`` for a stack of lower-triangular factors."""
    return np.linalg.solve(chol, rhs)


def evaluate(blocks: BlockData, driver: DriverSpec, theta, want_derivs: bool = True) -> QuasiLikEval:
    """Quasi-log-likelihood and optionally its gradient and Hessian."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _check_dims(blocks.x_anchor.shape[1], blocks.y_anchor.shape[1], driver, theta)
    u = blocks.used
    if u.size == 0:
        raise AllDegenerate("every weighting block is degenerate")
    ch = blocks.ch
    x, y, z, lc = blocks.x_anchor[u], blocks.y_anchor[u], blocks.z_hat[u], blocks.chol[u]
    resid = blocks.delta_y[u] - ch * driver.eval(x, y, z, theta)
    a = _tri_solve(lc, resid[..., None])  # L^{-1} r
    value = -0.5 * float(np.sum(a * a)) / ch
    if not want_derivs:
        return QuasiLikEval(value, None, None, blocks.n_dropped, blocks.n_used)
    w = _tri_solve(np.swapaxes(lc, -1, -2), a)[..., 0]  # Z^{-1} r
    jac = eval_driver_jacobian(driver, x, y, z, theta)
    grad = np.einsum("kdp,kd->p", jac, w)
    aj = _tri_solve(lc, jac)
    hess = -ch * np.einsum("kdp,kdq->pq", aj, aj)
    if not driver.linear_in_theta:
        hess = hess + _second_order_term(driver, x, y, z, theta, w)
    hess = 0.5 * (hess + hess.T)
    return QuasiLikEval(value, grad, hess, blocks.n_dropped, blocks.n_used)


def _second_order_term(driver, x, y, z, theta, w) -> np.ndarray:
    """sum_k d2psi_k / dtheta2 . (Z^{-1} r)_k via central differences of the Jacobian."""
    p = theta.size
    out = np.empty((p, p))
    for j in range(p):
        step = 1e-5 * (1.0 + abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += step
        tm[j] -= step
        djac = (eval_driver_jacobian(driver, x, y, z, tp) - eval_driver_jacobian(driver, x, y, z, tm)) / (2 * step)
        out[:, j] = np.einsum("kdp,kd->p", djac, w)
    return out


def quasi_loglik(obs: ObservationRecord, scheme: BlockScheme, driver: DriverSpec, theta,
                 want_derivs: bool = True, blocks: Optional[BlockData] = None) -> QuasiLikEval:
    """Evaluate H at ``theta``; pass ``blocks`` to reuse a prepared partition."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _check_dims(obs.d_x, obs.d_y, driver, theta)
    if blocks is None:
        blocks = prepare_blocks(obs, scheme)
    return evaluate(blocks, driver, theta, want_derivs)


def gamma_from_blocks(blocks: BlockData, driver: DriverSpec, theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    u = blocks.used
    if u.size == 0:
        raise AllDegenerate("every weighting block is degenerate")
    jac = eval_driver_jacobian(driver, blocks.x_anchor[u], blocks.y_anchor[u], blocks.z_hat[u], theta)
    aj = _tri_solve(blocks.chol[u], jac)
    gamma = np.einsum("kdp,kdq->pq", aj, aj) / u.size
    return 0.5 * (gamma + gamma.T)


def gamma_plugin(obs: ObservationRecord, scheme: BlockScheme, driver: DriverSpec, theta,
                 blocks: Optional[BlockData] = None) -> np.ndarray:
    """Block average of ``J' Zhat^{-1} J`` at ``theta`` over non-degenerate blocks."""
    if blocks is None:
        blocks = prepare_blocks(obs, scheme)
    return gamma_from_blocks(blocks, driver, theta)


def closed_form_linear(obs: ObservationRecord, scheme: BlockScheme, driver: DriverSpec) -> np.ndarray:
    """Weighted least squares for drivers affine in theta.

    Deliberately a per-block loop with explicit Cholesky solves so it shares
    no arithmetic path with the Newton optimiser.
    """
    if not driver.linear_in_theta:
        raise ConfigError(f"driver {driver.name!r} is not linear in theta", key="driver")
    _check_dims(obs.d_x, obs.d_y, driver, np.zeros(driver.d_theta))
    c, h = scheme.c, obs.h
    ch = c * h
    p = driver.d_theta
    normal = np.zeros((p, p))
    rhs = np.zeros(p)
    zero = np.zeros(p)
    used = 0
    for l in range(1, scheme.L):
        prev = realized_block_cov(obs, scheme, l - 1)
        if prev.degenerate:
            continue
        a = scheme.anchor(l)
        x = obs.x_path[a]
        y = obs.y_path[a]
        g = np.asarray(eval_driver_jacobian(driver, x, y, prev.z_hat, zero), dtype=float).reshape(obs.d_y, p)
        offset = np.asarray(driver.eval(x, y, prev.z_hat, zero), dtype=float).reshape(obs.d_y)
        dy = obs.y_path[scheme.anchor(l + 1)] - y
        factor = scipy.linalg.cho_factor(prev.z_hat, lower=True)
        zinv_g = scipy.linalg.cho_solve(factor, g)
        normal += ch * g.T @ zinv_g
        rhs += zinv_g.T @ (dy - ch * offset)
        used += 1
    if used == 0:
        raise AllDegenerate("every weighting block is degenerate")
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) > 1e14:
        raise SingularSystem("normal matrix of the weighted least-squares problem is singular")
    return np.linalg.solve(normal, rhs)


@dataclass
class OptimOptions:
    max_iter: int = 200
    grad_rtol: float = 1e-8
    grid_points: int = 5


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    h_value: float
    gamma_hat: np.ndarray
    std_errors: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float
    dropped_blocks: int
    on_boundary: bool = False
    used_blocks: int = 0
    starts: int = 1
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, np.ndarray):
                out[key] = val.tolist()
        return out


def _projected_gradient(grad, theta, box: ThetaBox) -> np.ndarray:
    pg = grad.copy()
    tol = 1e-12 * (1.0 + np.abs(box.upper - box.lower))
    at_lo = theta - box.lower <= tol
    at_hi = box.upper - theta <= tol
    pg[at_lo & (grad < 0)] = 0.0
    pg[at_hi & (grad > 0)] = 0.0
    return pg


def _newton_run(blocks, driver, box, start, opts: OptimOptions):
    theta = box.project(start)
    ev = evaluate(blocks, driver, theta)
    trace = [(theta.tolist(), ev.value)]
    it = 0
    while True:
        pg = _projected_gradient(ev.gradient, theta, box)
        gnorm = float(np.linalg.norm(pg))
        if not np.isfinite(ev.value):
            return theta, ev, it, False, gnorm, trace
        if gnorm <= opts.grad_rtol * (1.0 + abs(ev.value)):
            return theta, ev, it, True, gnorm, trace
        if it >= opts.max_iter:
            return theta, ev, it, False, gnorm, trace
        it += 1
        # Freeze coordinates pinned at a bound with the gradient pointing outward.
        free = pg != 0.0
        step = np.zeros_like(theta)
        neg_h = -ev.hessian[np.ix_(free, free)]
        try:
            fac = scipy.linalg.cho_factor(neg_h, lower=True)
            step[free] = scipy.linalg.cho_solve(fac, ev.gradient[free])
        except np.linalg.LinAlgError:
            scale = max(1.0, float(np.max(np.abs(np.diag(neg_h)))))
            step[free] = ev.gradient[free] / scale
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = box.project(theta + t * step)
            cev = evaluate(blocks, driver, cand)
            if np.isfinite(cev.value) and cev.value >= ev.value + 1e-4 * float(ev.gradient @ (cand - theta)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return theta, ev, it, False, gnorm, trace
        moved = float(np.linalg.norm(cand - theta))
        theta, ev = cand, cev
        trace.append((theta.tolist(), ev.value))
        if moved <= 1e-15 * (1.0 + float(np.linalg.norm(theta))):
            pg = _projected_gradient(ev.gradient, theta, box)
            return theta, ev, it, False, float(np.linalg.norm(pg)), trace


def _start_grid(box: ThetaBox, points: int) -> list:
    axes = [lo + (np.arange(points) + 0.5) / points * (hi - lo) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [np.array(p) for p in zip(*(m.ravel() for m in mesh))]


def _negative_definite(hess) -> bool:
    try:
        np.linalg.cholesky(-hess)
        return True
    except np.linalg.LinAlgError:
        return False


def maximize_quasi_lik(obs: ObservationRecord, scheme: BlockScheme, driver: DriverSpec,
                       box: ThetaBox, opts: Optional[OptimOptions] = None,
                       blocks: Optional[BlockData] = None) -> EstimationResult:
    """Projected Newton ascent from the box centre, with a grid of restarts on stall."""
    opts = opts or OptimOptions()
    if box.dim != driver.d_theta:
        raise DimError("theta box dimension does not match the driver")
    _check_dims(obs.d_x, obs.d_y, driver, box.center)
    if blocks is None:
        blocks = prepare_blocks(obs, scheme)
    if blocks.n_used == 0:
        raise AllDegenerate("every weighting block is degenerate")

    runs = [_newton_run(blocks, driver, box, box.center, opts)]
    theta, ev, _, conv, _, _ = runs[0]
    if not conv or not _negative_definite(ev.hessian):
        log.debug("Newton from centre stalled; restarting from a %d-point grid", opts.grid_points)
        for start in _start_grid(box, opts.grid_points):
            runs.append(_newton_run(blocks, driver, box, start, opts))

    finite = [r for r in runs if np.isfinite(r[1].value)]
    if not finite:
        raise OptFailure("quasi-likelihood is non-finite at every start")
    pool = [r for r in finite if r[3]] or finite
    best = max(pool, key=lambda r: r[1].value)
    theta, ev, iters, conv, gnorm, trace = best

    gamma = gamma_from_blocks(blocks, driver, theta)
    try:
        cov = np.linalg.inv(gamma) / (obs.n * obs.h)
        se = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        se = np.full(driver.d_theta, np.nan)
    return EstimationResult(
        theta_hat=theta,
        h_value=ev.value,
        gamma_hat=gamma,
        std_errors=se,
        iterations=iters,
        converged=bool(conv),
        grad_norm=gnorm,
        dropped_blocks=ev.dropped_blocks,
        on_boundary=box.on_boundary(theta),
        used_blocks=ev.used_blocks,
        starts=len(runs),
        trace=trace,
    )
