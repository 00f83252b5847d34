"""Closed-loop characteristic polynomial and its small-``tau`` root groups.

With ``P = N/D``, ``P_n = N_n/D_n``, ``Q_A = N_a/D_a``, ``Q_B = N_b/D_b`` and
``C = N_c/D_c`` the loop of plant, DOB and outer controller has characteristic
polynomial

    N (N_n N_c D_b + D_n D_c N_b) D_a + N_n D D_c D_b (D_a - N_a).

As ``tau -> 0`` its roots split into a slow group tending to the roots of
``N (D_n D_c + N_n N_c)`` and a fast group tending to ``1/tau`` times the roots
of ``D_b^1 (D_a^1 + gamma N_a^1)``.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lti import PlantError
from .poly import Polynomial, RationalFunction, coeff_rel_error, is_hurwitz, roots
from .qfilter import QFilterSpec, pf_polynomial, qfilter_tf

TOL_BOUNDARY = 1e-6
DEFAULT_TAUS = (1e-1, 1e-2, 1e-3, 1e-4)


class UnmodelledDynamicsError(PlantError):
    """Plant and nominal model have different relative degrees."""


class Verdict(str, enum.Enum):
    ROBUST = "robustly-stable-for-small-tau"
    UNSTABLE = "unstable-limit"
    BOUNDARY = "indeterminate-boundary"


@dataclass(frozen=True, eq=False)
class LoopFactors:
    """The five blocks of the loop; the Q-filters carry their own ``tau``-free shape."""

    P: RationalFunction
    P_n: RationalFunction
    qa: QFilterSpec
    C: RationalFunction
    qb: QFilterSpec = None

    def __post_init__(self):
        object.__setattr__(self, "P", self.P.cancel())
        object.__setattr__(self, "P_n", self.P_n.cancel())
        object.__setattr__(self, "C", self.C.cancel())
        if self.qb is None:
            object.__setattr__(self, "qb", self.qa)
        if not (self.P.is_strictly_proper and self.P_n.is_strictly_proper):
            raise PlantError("plant and nominal model must be strictly proper")
        if not is_hurwitz(self.P_n.num).stable:
            raise PlantError("nominal model must be minimum phase")

    def filters(self, tau: float) -> tuple[RationalFunction, RationalFunction]:
        return qfilter_tf(self.qa.with_tau(tau)), qfilter_tf(self.qb.with_tau(tau))

    @property
    def gamma(self) -> float:
        if self.P.relative_degree != self.P_n.relative_degree:
            raise UnmodelledDynamicsError(
                f"relative degree {self.P.relative_degree} of the plant differs from "
                f"{self.P_n.relative_degree} of the nominal model")
        return self.P.high_frequency_gain / self.P_n.high_frequency_gain - 1.0


def characteristic_polynomial(f: LoopFactors, tau: float) -> Polynomial:
    Qa, Qb = f.filters(tau)
    N, D = f.P.num, f.P.den
    Nn, Dn = f.P_n.num, f.P_n.den
    Na, Da = Qa.num, Qa.den
    Nb, Db = Qb.num, Qb.den
    Nc, Dc = f.C.num, f.C.den
    return N * (Nn * Nc * Db + Dn * Dc * Nb) * Da + Nn * D * Dc * Db * (Da - Na)


def limit_groups(f: LoopFactors) -> tuple[Polynomial, Polynomial, float]:
    """``(A1, A2, gamma)`` of the slow and (unit-``tau``) fast limits."""
    gamma = f.gamma
    N = f.P.num
    A1 = N * (f.P_n.den * f.C.den + f.P_n.num * f.C.num)
    Db1 = f.qb.unit_denominator()
    Da1 = f.qa.unit_denominator()
    Na1 = f.qa.unit_numerator()
    A2 = Db1 * (Da1 + gamma * Na1)
    pf = pf_polynomial(f.qa, f.P.high_frequency_gain, f.P_n.high_frequency_gain)
    err = coeff_rel_error(A2, Db1 * pf)
    assert err < 1e-12, f"A2 differs from D_b^1 p_f (rel. err {err:.3g})"
    return A1, A2, gamma


def _greedy_match(targets: np.ndarray, pool: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Assign each target a distinct pool element, closest pairs first."""
    if targets.size == 0:
        return [], np.zeros(0)
    D = np.abs(targets[:, None] - pool[None, :])
    chosen = [-1] * targets.size
    dist = np.zeros(targets.size)
    for _ in range(targets.size):
        i, j = np.unravel_index(np.argmin(D), D.shape)
        chosen[i] = int(j)
        dist[i] = D[i, j]
        D[i, :] = np.inf
        D[:, j] = np.inf
    return chosen, dist


@dataclass(frozen=True)
class Condition:
    ok: bool
    margin: float


@dataclass(frozen=True, eq=False)
class StabilityReport:
    tau: float
    delta: Polynomial
    delta_roots: np.ndarray
    delta_hurwitz: bool
    slow_group: np.ndarray
    fast_group_scaled: np.ndarray
    slow_distance: float
    fast_distance: float
    A1_roots: np.ndarray
    A2_roots: np.ndarray
    gamma: float
    cond_A: Condition
    cond_B: Condition
    cond_C: Condition
    verdict: Verdict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def cl(z):
            return [[float(v.real), float(v.imag)] for v in z]

        return {
            "tau": self.tau,
            "delta": self.delta.coeffs.tolist(),
            "delta_roots": cl(self.delta_roots),
            "delta_hurwitz": self.delta_hurwitz,
            "slow_group": cl(self.slow_group),
            "fast_group_scaled": cl(self.fast_group_scaled),
            "slow_distance": self.slow_distance,
            "fast_distance": self.fast_distance,
            "A1_roots": cl(self.A1_roots),
            "A2_roots": cl(self.A2_roots),
            "gamma": self.gamma,
            "cond_A": {"ok": self.cond_A.ok, "margin": self.cond_A.margin},
            "cond_B": {"ok": self.cond_B.ok, "margin": self.cond_B.margin},
            "cond_C": {"ok": self.cond_C.ok, "margin": self.cond_C.margin},
            "verdict": self.verdict.value,
        }


def _cond(p: Polynomial) -> Condition:
    r = is_hurwitz(p)
    return Condition(r.stable, r.margin)


def limit_verdict(f: LoopFactors, tol_boundary: float = TOL_BOUNDARY) -> tuple[Verdict, dict]:
    A1, A2, gamma = limit_groups(f)
    r1, r2 = roots(A1), roots(A2)
    limit = np.concatenate([r1, r2])
    cond_A = _cond(f.P.num)
    cond_B = _cond(f.P_n.den * f.C.den + f.P_n.num * f.C.num)
    pf = pf_polynomial(f.qa, f.P.high_frequency_gain, f.P_n.high_frequency_gain)
    cond_C = _cond(pf)
    if limit.size and np.any(np.abs(limit.real) < tol_boundary):
        verdict = Verdict.BOUNDARY
    elif is_hurwitz(A1).stable and is_hurwitz(A2).stable:
        verdict = Verdict.ROBUST
    else:
        verdict = Verdict.UNSTABLE
    info = dict(A1=A1, A2=A2, gamma=gamma, A1_roots=r1, A2_roots=r2,
                cond_A=cond_A, cond_B=cond_B, cond_C=cond_C)
    return verdict, info


def analyze(f: LoopFactors, tau: float, tol_boundary: float = TOL_BOUNDARY,
            _limit: tuple | None = None) -> StabilityReport:
    verdict, info = _limit if _limit is not None else limit_verdict(f, tol_boundary)
    delta = characteristic_polynomial(f, tau)
    r = roots(delta)
    r1, r2 = info["A1_roots"], info["A2_roots"]
    chosen, d_slow = _greedy_match(r1, r.copy())
    rest = np.setdiff1d(np.arange(r.size), chosen)
    fast = r[rest] * tau
    chosen_f, d_fast = _greedy_match(r2, fast.copy())
    slow = r[chosen] if chosen else np.zeros(0, dtype=complex)
    return StabilityReport(
        tau=tau, delta=delta, delta_roots=r, delta_hurwitz=is_hurwitz(delta).stable,
        slow_group=slow, fast_group_scaled=fast,
        slow_distance=float(np.max(d_slow)) if d_slow.size else 0.0,
        fast_distance=float(np.max(d_fast)) if d_fast.size else 0.0,
        A1_roots=r1, A2_roots=r2, gamma=info["gamma"],
        cond_A=info["cond_A"], cond_B=info["cond_B"], cond_C=info["cond_C"], verdict=verdict,
    )


def root_grouping(f: LoopFactors, taus: Sequence[float] = DEFAULT_TAUS,
                  tol_boundary: float = TOL_BOUNDARY, workers: int | None = None) -> list[StabilityReport]:
    """One report per ``tau``, returned in descending ``tau`` order."""
    taus = sorted((float(t) for t in taus), reverse=True)
    if any(t <= 0 for t in taus):
        raise ValueError("taus must be positive")
    lim = limit_verdict(f, tol_boundary)
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda t: analyze(f, t, tol_boundary, lim), taus))
    return [analyze(f, t, tol_boundary, lim) for t in taus]


def empirical_tau_threshold(reports: Sequence[StabilityReport]) -> float | None:
    """Largest tested ``tau`` from which every smaller tested ``tau`` is stable."""
    best = None
    for rep in sorted(reports, key=lambda r: r.tau):
        if not rep.delta_hurwitz:
            break
        best = rep.tau
    return best
