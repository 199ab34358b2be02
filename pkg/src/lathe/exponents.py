"""Error exponents of tree structure learning, all in nats.

Closed forms cover the passive exponent and the t-hop error exponents. The
two-hop exponents that involve the confidence margin are constrained
KL-divergence minimizations over distributions on {+1,-1}^3, solved in the
exponential-tilt family.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .errors import DomainError, InfeasibleError

# Configurations of (x_i, x_j, x_k), fixed order used by every 8-vector here.
CONFIGS = np.array(list(itertools.product((1, -1), repeat=3)), dtype=float)
XI, XJ, XK = CONFIGS.T

C_RHO_BREAKS = (0.03, 0.1, 0.2, 0.4, 0.6, 0.8)
C_RHO_VALUES = (1.0, 1.01, 1.03, 1.08, 1.19, 1.29, 1.4)

TILT_BRACKET = 512.0
TILT_TOL = 1e-10


def _check_rho(rho: float) -> None:
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")


def k_passive(rho: float) -> float:
    """Exponent of the passive (Chow-Liu) structure error."""
    _check_rho(rho)
    return -math.log1p(-(1.0 - rho) / 2.0 * (1.0 - math.sqrt(1.0 - rho * rho)))


def tilde_theta(t: int, theta: float) -> float:
    """Flip probability between the ends of a t-edge path, by the one-step recursion."""
    if t < 1:
        raise DomainError(f"hop count must be >= 1, got {t}")
    if not 0.0 < theta < 0.5:
        raise DomainError(f"theta must lie in (0, 1/2), got {theta}")
    value = theta
    for _ in range(t - 1):
        value = (1.0 - 2.0 * theta) * value + theta
    return value


def k_t_hop(t: int, rho: float) -> float:
    """Exponent of a t-hop error (the t-edge path closed by a spurious edge)."""
    if t < 2:
        raise DomainError(f"t-hop exponents start at t=2, got {t}")
    _check_rho(rho)
    theta = (1.0 - rho) / 2.0
    return -math.log1p(-tilde_theta(t - 1, theta) * (1.0 - math.sqrt(4.0 * theta * (1.0 - theta))))


def binary_kl(a: float, b: float) -> float:
    """D(Bern(a) || Bern(b)) in nats; ``inf`` when ``a`` puts mass where ``b`` has none."""
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"a must lie in [0, 1], got {a}")
    if not 0.0 <= b <= 1.0:
        raise DomainError(f"b must lie in [0, 1], got {b}")
    if (b == 0.0 and a > 0.0) or (b == 1.0 and a < 1.0):
        return math.inf
    total = 0.0
    if a > 0.0:
        total += a * math.log(a / b)
    if a < 1.0:
        total += (1.0 - a) * math.log((1.0 - a) / (1.0 - b))
    return max(total, 0.0)


def kl(q: np.ndarray, p: np.ndarray) -> float:
    return float(np.sum(xlogy(q, q) - xlogy(q, p)))


@dataclass(frozen=True)
class ThreeNodePathModel:
    """Law of the homogeneous path ``i - j - k`` over the 8 configurations in ``CONFIGS``."""

    rho: float
    probs: np.ndarray = field(repr=False)

    @classmethod
    def from_rho(cls, rho: float) -> "ThreeNodePathModel":
        _check_rho(rho)
        theta = (1.0 - rho) / 2.0
        same_ij = XI == XJ
        same_jk = XJ == XK
        probs = 0.5 * np.where(same_ij, 1 - theta, theta) * np.where(same_jk, 1 - theta, theta)
        return cls(rho, probs)

    def expect(self, g: np.ndarray) -> float:
        return float(self.probs @ g)


@dataclass(frozen=True)
class TiltSolution:
    lam: float
    q: np.ndarray
    divergence: float
    residual: float
    converged: bool


def _tilted(p: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    # shift the exponent for stability; normalization absorbs it
    z = -lam * g
    w = p * np.exp(z - z.max())
    return w / w.sum()


def min_kl_tilted(model: ThreeNodePathModel, g) -> TiltSolution:
    """Minimize D(Q || P) over Q subject to E_Q[g] <= 0.

    When P already satisfies the constraint the answer is Q = P. Otherwise the
    minimizer is Q proportional to P * exp(-lam * g) with E_Q[g] = 0, and lam > 0
    is found by bisection on the (decreasing) map lam -> E_{Q_lam}[g].
    """
    p = model.probs
    g = np.asarray(g, dtype=float)
    if g.shape != (8,):
        raise DomainError("g must give one value per configuration (8 values)")
    mean0 = float(p @ g)
    if mean0 <= 0.0:
        return TiltSolution(0.0, p.copy(), 0.0, mean0, True)
    if not np.any(g[p > 0] < 0):
        raise InfeasibleError("g is nonnegative on the support of P; constraint cannot be met")

    def residual(lam):
        return float(_tilted(p, g, lam) @ g)

    lo, hi = 0.0, TILT_BRACKET
    while residual(hi) > 0.0:
        lo, hi = hi, hi * 2.0
        if hi > TILT_BRACKET * 2**20:
            raise InfeasibleError("no sign change of the constraint within the tilt bracket")
    r = residual(hi)
    for _ in range(200):
        if abs(r) < TILT_TOL and r <= 0.0:
            break
        mid = 0.5 * (lo + hi)
        r_mid = residual(mid)
        if r_mid > 0.0:
            lo = mid
        else:
            hi, r = mid, r_mid
        if hi - lo <= 1e-15 * hi:
            break
    q = _tilted(p, g, hi)
    res = float(q @ g)
    return TiltSolution(hi, q, kl(q, p), res, abs(res) < TILT_TOL)


def k2_conf_constraint(rho: float) -> np.ndarray:
    """g with E_Q[g] <= 0 iff rho_ij(Q) <= rho_ik(Q) * (13 + 7 rho) / 20."""
    return XI * XJ - (13.0 + 7.0 * rho) / 20.0 * XI * XK


def k2_unconf_constraint(rho: float) -> np.ndarray:
    """g with E_Q[g] <= 0 iff rho_ik(Q) >= rho_ij(Q) * (19 + 21 rho) / 40."""
    return (19.0 + 21.0 * rho) / 40.0 * XI * XJ - XI * XK


def k2_conf_solution(rho: float) -> TiltSolution:
    return min_kl_tilted(ThreeNodePathModel.from_rho(rho), k2_conf_constraint(rho))


def k2_unconf_solution(rho: float) -> TiltSolution:
    return min_kl_tilted(ThreeNodePathModel.from_rho(rho), k2_unconf_constraint(rho))


def k2_conf(rho: float) -> float:
    """Exponent of a two-hop error on edges judged confident."""
    return k2_conf_solution(rho).divergence


UNCONF_PACKING = 13
UNCONF_ALPHA = 0.8


def k2_unconf(rho: float) -> float:
    """Exponent of at least 13 independent unconfident triples under alpha = 0.8."""
    return UNCONF_ALPHA * UNCONF_PACKING * k2_unconf_solution(rho).divergence


def c_rho_lookup(rho: float) -> float:
    """Guaranteed boost of the active exponent over the passive one."""
    _check_rho(rho)
    return C_RHO_VALUES[bisect.bisect_right(C_RHO_BREAKS, rho)]


def rho_grid(start: float = 0.01, stop: float = 0.99, step: float = 0.005) -> np.ndarray:
    """Inclusive grid, rounded so that interval endpoints land exactly."""
    count = math.floor((stop - start) / step + 1e-9) + 1
    return np.round(start + step * np.arange(count), 10)


@dataclass(frozen=True)
class ExponentCurve:
    label: str
    rho: np.ndarray
    values: np.ndarray

    def rows(self):
        for r, v in zip(self.rho, self.values):
            yield float(r), float(v), self.label


def _ratio(t):
    return lambda r: k_t_hop(t, r) / k_passive(r)


CURVES: dict[str, Callable[[float], float]] = {
    "k-passive": k_passive,
    "k3": lambda r: k_t_hop(3, r),
    "k4": lambda r: k_t_hop(4, r),
    "k5": lambda r: k_t_hop(5, r),
    "ratio-k3": _ratio(3),
    "ratio-k4": _ratio(4),
    "ratio-k5": _ratio(5),
    "k2-conf": k2_conf,
    "k2-unconf": k2_unconf,
    "ratio-k2-conf-k3": lambda r: k2_conf(r) / k_t_hop(3, r),
    "ratio-k2-unconf": lambda r: k2_unconf(r) / k_passive(r),
    "c-rho": c_rho_lookup,
}


def exponent_curve(name: str, grid: np.ndarray | None = None) -> ExponentCurve:
    if name not in CURVES:
        raise DomainError(f"unknown curve {name!r}; choose from {sorted(CURVES)}")
    grid = rho_grid() if grid is None else np.asarray(grid, dtype=float)
    fn = CURVES[name]
    return ExponentCurve(name, grid, np.array([fn(float(r)) for r in grid]))


@dataclass(frozen=True)
class BoundCheck:
    check: str
    rho: float
    lhs: float
    rhs: float
    strict: bool = False

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def passed(self) -> bool:
        return self.lhs > self.rhs if self.strict else self.lhs >= self.rhs


@dataclass
class VerificationReport:
    rows: list[BoundCheck]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def worst_margins(self) -> dict[str, tuple[float, float]]:
        """check name -> (worst margin, rho where it occurs)."""
        worst: dict[str, tuple[float, float]] = {}
        for r in self.rows:
            if r.check not in worst or r.margin < worst[r.check][0]:
                worst[r.check] = (r.margin, r.rho)
        return worst

    def failures(self) -> list[BoundCheck]:
        return [r for r in self.rows if not r.passed]


def _checks_at(rho: float) -> list[BoundCheck]:
    theta = (1.0 - rho) / 2.0
    kp = k_passive(rho)
    k3 = k_t_hop(3, rho)
    c = c_rho_lookup(rho)
    out = []
    # three-hop errors under the smallest admissible global fraction
    if rho >= 0.8:
        out.append(BoundCheck("a", rho, 0.8 * k3 / kp, 1.4))
    elif rho >= 0.6:
        out.append(BoundCheck("a", rho, 0.8 * k3 / kp, 1.29))
    elif rho >= 0.5:
        out.append(BoundCheck("a", rho, 0.8 * k3 / kp, 1.19))
    elif rho >= 0.4:
        out.append(BoundCheck("b", rho, 0.85 * k3 / kp, 1.19))
        out.append(BoundCheck("c", rho, 0.8 * binary_kl(theta, 0.12), 1.23 * kp, strict=True))
    # rho-hat concentration, both tails
    out.append(BoundCheck("d.upper", rho, 125.0 * binary_kl(5.0 * theta / 6.0, theta), c * kp))
    out.append(BoundCheck("d.lower", rho, 130.0 * binary_kl(7.0 * theta / 6.0, theta), c * kp))
    out.append(BoundCheck("e", rho, k2_conf(rho), k3))
    out.append(BoundCheck("f", rho, k2_unconf(rho), c * kp))
    if rho >= 0.8:
        out.append(BoundCheck("g.k5", rho, 130.0 * binary_kl(6.0 * theta / 5.0, theta), 1.4 * kp))
    elif rho >= 0.6:
        shifted = theta * (1.0 + 1.0 / 5.72)
        out.append(BoundCheck("g.k5.72", rho, 130.0 * binary_kl(shifted, theta), 1.3 * kp))
    return out


def verify_bounds(grid: np.ndarray | None = None) -> VerificationReport:
    """Evaluate every numeric inequality behind the active-learning guarantee on ``grid``."""
    grid = rho_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any((grid <= 0.0) | (grid >= 1.0)):
        raise DomainError("verification grid must lie inside (0, 1)")
    rows: list[BoundCheck] = []
    for r in grid:
        rows.extend(_checks_at(float(r)))
    return VerificationReport(rows)
