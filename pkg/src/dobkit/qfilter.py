"""Q-filters, the fast polynomial ``p_f`` and coefficient design.

A Q-filter of order ``mu`` is

    Q(s) = (c_{mu-1} (tau s)^{mu-1} + ... + c_0) / ((tau s)^mu + a_{mu-1} (tau s)^{mu-1} + ... + a_0)

with ``c_0 = a_0`` (unit dc gain). Its internal loop inside the DOB is governed
by ``p_f(s) = s^mu + sum_i (a_i + gamma c_i) s^i`` with ``gamma = g/g_n - 1``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .poly import IndeterminateRouthError, Polynomial, RationalFunction, is_hurwitz, routh_stable

log = logging.getLogger(__name__)

K_CAP = 1e6
K_TOL = 1e-9
DEFAULT_SAFETY = 0.9
MARGIN_WARN = 1e-3


class QFilterError(ValueError):
    pass


class DesignInfeasibleError(QFilterError):
    pass


@dataclass(frozen=True)
class QFilterSpec:
    tau: float
    mu: int
    a: tuple
    c: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        if not self.tau > 0:
            raise QFilterError("tau must be positive")
        if self.mu < 1 or len(self.a) != self.mu or len(self.c) != self.mu:
            raise QFilterError("a and c must each have mu entries")
        if self.c[0] != self.a[0]:
            raise QFilterError("c_0 must equal a_0 for unit dc gain")
        if not is_hurwitz(self.unit_denominator()).stable:
            raise QFilterError("Q-filter denominator is not Hurwitz")

    @classmethod
    def standard(cls, tau: float, a: Sequence[float]) -> "QFilterSpec":
        """``c = (a_0, 0, ..., 0)``, the all-pole filter of relative degree ``mu``."""
        a = tuple(a)
        return cls(tau, len(a), a, (a[0],) + (0.0,) * (len(a) - 1))

    def with_tau(self, tau: float) -> "QFilterSpec":
        return QFilterSpec(tau, self.mu, self.a, self.c)

    @property
    def relative_degree(self) -> int:
        nz = [i for i, v in enumerate(self.c) if v != 0.0]
        return self.mu - max(nz)

    def check_plant(self, nu: int) -> None:
        """Structural constraints relative to a plant of relative degree ``nu``."""
        if self.mu < nu:
            raise QFilterError(f"filter order {self.mu} is below the relative degree {nu}")
        if self.relative_degree < nu:
            raise QFilterError(f"filter relative degree {self.relative_degree} is below {nu}")

    def unit_denominator(self) -> Polynomial:
        """Denominator with ``tau = 1``."""
        return Polynomial(list(self.a) + [1.0])

    def unit_numerator(self) -> Polynomial:
        return Polynomial(self.c)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "mu": self.mu, "a": list(self.a), "c": list(self.c)}


def qfilter_tf(spec: QFilterSpec) -> RationalFunction:
    """Transfer function in ``s`` with monic denominator."""
    num = spec.unit_numerator().compose_scaled(spec.tau)
    den = spec.unit_denominator().compose_scaled(spec.tau)
    return RationalFunction(num, den).normalized()


def pf_polynomial(spec: QFilterSpec, g: float, g_n: float) -> Polynomial:
    if g_n == 0:
        raise QFilterError("nominal gain must be nonzero")
    gamma = (g - g_n) / g_n
    coeffs = [a + gamma * c for a, c in zip(spec.a, spec.c)] + [1.0]
    return Polynomial(coeffs)


@dataclass(frozen=True)
class GainInterval:
    g_min: float
    g_max: float
    g_n: float

    def __post_init__(self):
        if self.g_min > self.g_max:
            raise QFilterError("g_min exceeds g_max")
        s = np.sign([self.g_min, self.g_max, self.g_n])
        if 0 in s or len(set(s)) != 1:
            raise QFilterError("gain interval must exclude zero and share the sign of g_n")

    def grid(self, points: int) -> np.ndarray:
        return np.linspace(self.g_min, self.g_max, points)

    @property
    def max_ratio(self) -> float:
        return max(self.g_min / self.g_n, self.g_max / self.g_n)

    def gamma(self, g: float) -> float:
        return (g - self.g_n) / self.g_n


@dataclass(frozen=True)
class DesignResult:
    a: tuple
    kbar: float
    k_sup: float
    capped: bool

    @property
    def c(self) -> tuple:
        return (self.a[0],) + (0.0,) * (len(self.a) - 1)

    def spec(self, tau: float) -> QFilterSpec:
        return QFilterSpec(tau, len(self.a), self.a, self.c)

    def to_dict(self) -> dict:
        return {"a": list(self.a), "c": list(self.c), "kbar": self.kbar, "a0": self.a[0],
                "k_sup": self.k_sup, "k_sup_capped": self.capped}


def _stable(p: Polynomial) -> bool:
    try:
        return routh_stable(p)
    except IndeterminateRouthError:
        return is_hurwitz(p).stable


def sup_stable_gain(rho: Polynomial, k_cap: float = K_CAP, tol: float = K_TOL) -> tuple[float, bool]:
    """Largest ``k`` with ``s rho(s) + k'`` Hurwitz for every ``0 < k' <= k``.

    A doubling scan from ``tol`` finds the first unstable gain, then bisection
    refines the crossing. Returns ``(k_sup, capped)``.
    """
    srho = Polynomial([0.0]) + Polynomial([0.0, 1.0]) * rho

    def ok(k):
        return _stable(srho + k)

    if not ok(tol):
        raise DesignInfeasibleError("s*rho(s) + k is not Hurwitz for any small k > 0")
    lo = tol
    hi = None
    k = tol
    while k < k_cap:
        k = min(2.0 * k, k_cap)
        if ok(k):
            lo = k
        else:
            hi = k
            break
    if hi is None:
        return k_cap, True
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, False


def design_coefficients(nu: int, rho: Polynomial, gains: GainInterval,
                        safety: float = DEFAULT_SAFETY, k_cap: float = K_CAP) -> DesignResult:
    """Coefficients ``a_0..a_{nu-1}`` for ``mu = nu``, ``c = (a_0, 0, ...)``.

    ``rho(s) = s^{nu-1} + a_{nu-1} s^{nu-2} + ... + a_1`` fixes the upper
    coefficients; ``a_0 = kbar / max(g/g_n)`` with ``kbar = safety * k_sup``.
    """
    if not 0 < safety < 1:
        raise QFilterError("safety factor must lie in (0, 1)")
    if rho.degree != nu - 1 or abs(rho.lead - 1.0) > 1e-12:
        raise QFilterError(f"rho must be monic of degree {nu - 1}")
    if rho.degree > 0 and not is_hurwitz(rho).stable:
        raise QFilterError("rho must be Hurwitz")
    k_sup, capped = sup_stable_gain(rho, k_cap)
    kbar = safety * k_sup
    a0 = kbar / gains.max_ratio
    a = (a0,) + tuple(float(v) for v in rho.coeffs[:-1])
    log.info("designed a=%s (k_sup=%.6g%s)", a, k_sup, ", capped" if capped else "")
    return DesignResult(a=a, kbar=kbar, k_sup=k_sup, capped=capped)


@dataclass(frozen=True)
class ConditionCResult:
    ok: bool
    worst_margin: float
    worst_g: float
    violating_g: tuple

    def to_dict(self) -> dict:
        return {"ok": self.ok, "worst_margin": self.worst_margin, "worst_g": self.worst_g,
                "violating_g": list(self.violating_g)}


def verify_condition_C(spec: QFilterSpec, gains: GainInterval, grid_points: int = 1001) -> ConditionCResult:
    """``p_f`` Hurwitz over a uniform grid of ``g`` including both endpoints."""
    if grid_points < 2:
        raise QFilterError("grid_points must be at least 2")
    worst = np.inf
    worst_g = gains.g_min
    bad = []
    for g in gains.grid(grid_points):
        res = is_hurwitz(pf_polynomial(spec, g, gains.g_n))
        if not res.stable:
            bad.append(float(g))
        if res.margin < worst:
            worst, worst_g = res.margin, float(g)
    if not bad and worst < MARGIN_WARN:
        warnings.warn(f"p_f stability margin {worst:.3g} near the imaginary axis at g={worst_g:.6g}",
                      RuntimeWarning, stacklevel=2)
    return ConditionCResult(ok=not bad, worst_margin=float(worst), worst_g=worst_g, violating_g=tuple(bad))


def qfilter_from_dict(spec: dict) -> QFilterSpec | tuple[DesignResult, GainInterval]:
    """Parse ``{"tau", "mu", "a", "c"}`` or ``{"design": {...}}``."""
    if "design" in spec:
        d = spec["design"]
        gains = GainInterval(d["g_min"], d["g_max"], d["g_n"])
        res = design_coefficients(int(d["nu"]), Polynomial(d["rho"]), gains,
                                  d.get("safety", DEFAULT_SAFETY), d.get("k_cap", K_CAP))
        return res, gains
    return QFilterSpec(float(spec["tau"]), int(spec["mu"]), spec["a"], spec["c"])
