"""Power-law sampling schedules h = n^(-0.05 l), c = n^(0.05 k) and their admissibility."""

from __future__ import annotations

import math
from dataclasses import dataclass

L_RANGE = range(13, 20)
K_RANGE = range(1, 19)


@dataclass(frozen=True)
class RateSchedule:
    n: int
    l: int
    k: int
    h: float
    c: int
    valid: bool
    violated: tuple

    @property
    def horizon(self) -> float:
        return self.n * self.h


def step_size(n: int, l: int) -> float:
    return float(n) ** (-0.05 * l)


def block_size(n: int, k: int) -> int:
    # at least 2 so that a 2-D realized covariance can be full rank
    return max(2, int(round(float(n) ** (0.05 * k))))


def violated_rules(l: int, k: int) -> list:
    """Rule identifiers among ``a``, ``b``, ``c``, ``range`` that (l, k) breaks.

    a: n h^2 c -> 0, i.e. k <= 2l - 20 (inclusive, matching the tabulated grid)
    b: sqrt(n h) / c -> 0, i.e. k >= max(1, 10 - l/2)
    c: n^3 h^5 -> 0, i.e. l > 12
    range: 13 <= l <= 19
    """
    out = []
    if k > 2 * l - 20:
        out.append("a")
    if k < max(1.0, 10.0 - l / 2.0):
        out.append("b")
    if not l > 12:
        out.append("c")
    if not 13 <= l <= 19:
        out.append("range")
    return out


def check_rate_conditions(l: int, k: int) -> tuple:
    bad = violated_rules(l, k)
    return (not bad, bad)


def schedule(n: int, l: int, k: int) -> RateSchedule:
    bad = violated_rules(l, k)
    return RateSchedule(n, l, k, step_size(n, l), block_size(n, k), not bad, tuple(bad))


def validity_grid() -> dict:
    """``{(k, l): bool}`` over k = 1..18 and l = 13..19."""
    return {(k, l): check_rate_conditions(l, k)[0] for k in K_RANGE for l in L_RANGE}


def grid_csv() -> str:
    grid = validity_grid()
    lines = ["k," + ",".join(str(l) for l in L_RANGE)]
    for k in K_RANGE:
        lines.append(f"{k}," + ",".join(str(int(grid[k, l])) for l in L_RANGE))
    return "\n".join(lines) + "\n"


def rate_exponents(l: int, k: int) -> dict:
    """Exponents of n in n h^2 c, sqrt(n h)/c and n^3 h^5; all negative when admissible."""
    return {
        "a": 1 + 0.05 * k - 0.1 * l,
        "b": 0.5 - 0.025 * l - 0.05 * k,
        "c": 3 - 0.25 * l,
    }


def rate_quantities(n: int, l: int, k: int) -> dict:
    return {key: math.pow(n, e) for key, e in rate_exponents(l, k).items()}
