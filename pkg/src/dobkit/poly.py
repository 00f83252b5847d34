"""Real-coefficient polynomials, rational functions and Hurwitz tests.

Coefficients are stored in ascending order of degree, ``coeffs[i]`` being the
coefficient of ``s**i``. This is the reverse of ``numpy.roots``/``numpy.poly``
convention, so conversions go through :meth:`Polynomial.descending`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TOL_ROOT_RECON = 1e-8
TOL_PIVOT = 1e-10
TOL_COMMON_ROOT = 1e-7


class DegenerateInputError(ValueError):
    """Raised for the zero polynomial where a nonzero one is required."""


class NumericRangeError(ArithmeticError):
    """Raised when polynomial arithmetic overflows to a non-finite value."""


class IndeterminateRouthError(ArithmeticError):
    """A Routh pivot fell below tolerance; the table cannot decide."""


def _strip(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1]


class Polynomial:
    """Immutable real polynomial with ascending coefficients.

    Trailing (highest-degree) exact zeros are stripped on construction, so the
    leading coefficient is nonzero unless the polynomial is identically zero.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable[float]):
        if not hasattr(coeffs, "__len__"):
            coeffs = list(coeffs)
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel()
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise NumericRangeError("non-finite polynomial coefficient")
        c = _strip(c.copy())
        c.setflags(write=False)
        self._c = c

    @classmethod
    def from_roots(cls, roots: Sequence[complex], lead: float = 1.0) -> "Polynomial":
        c = np.poly(np.asarray(roots, dtype=complex)) if len(roots) else np.ones(1)
        return cls(lead * np.real_if_close(c, tol=1e6).real[::-1])

    @classmethod
    def from_descending(cls, coeffs: Iterable[float]) -> "Polynomial":
        return cls(np.asarray(list(coeffs), dtype=float)[::-1])

    @classmethod
    def monomial(cls, k: int, scale: float = 1.0) -> "Polynomial":
        c = np.zeros(k + 1)
        c[k] = scale
        return cls(c)

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return self._c.size - 1

    @property
    def is_zero(self) -> bool:
        return self._c.size == 1 and self._c[0] == 0.0

    @property
    def lead(self) -> float:
        return float(self._c[-1])

    def descending(self) -> np.ndarray:
        return self._c[::-1].copy()

    def __call__(self, s):
        return np.polyval(self._c[::-1], s)

    def __repr__(self) -> str:
        return f"Polynomial({self._c.tolist()})"

    def __len__(self) -> int:
        return self._c.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self._c, other._c)

    def __hash__(self) -> int:
        return hash(self._c.tobytes())

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        return Polynomial([float(other)])

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        n = max(self._c.size, other._c.size)
        out = np.zeros(n)
        out[: self._c.size] += self._c
        out[: other._c.size] += other._c
        return Polynomial(out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(-self._c)

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Polynomial":
        other = self._coerce(other)
        with np.errstate(over="raise", invalid="raise"):
            try:
                out = np.convolve(self._c, other._c)
            except FloatingPointError as exc:
                raise NumericRangeError(str(exc)) from None
        return Polynomial(out)

    __rmul__ = __mul__

    def __truediv__(self, k: float) -> "Polynomial":
        return Polynomial(self._c / float(k))

    def divmod(self, other: "Polynomial") -> tuple["Polynomial", "Polynomial"]:
        q, r = np.polydiv(self.descending(), other.descending())
        return Polynomial.from_descending(q), Polynomial.from_descending(r)

    def derivative(self) -> "Polynomial":
        if self.degree == 0:
            return Polynomial([0.0])
        return Polynomial(self._c[1:] * np.arange(1, self._c.size))

    def monic(self) -> "Polynomial":
        if self.is_zero:
            raise DegenerateInputError("zero polynomial has no monic form")
        return Polynomial(self._c / self._c[-1])

    def compose_scaled(self, tau: float) -> "Polynomial":
        """Return ``p(tau * s)``."""
        if not tau > 0:
            raise ValueError("tau must be positive")
        with np.errstate(over="raise", invalid="raise"):
            try:
                out = self._c * tau ** np.arange(self._c.size)
            except FloatingPointError as exc:
                raise NumericRangeError(str(exc)) from None
        return Polynomial(out)

    def roots(self) -> np.ndarray:
        return roots(self)

    def allclose(self, other: "Polynomial", rtol: float = 1e-8) -> bool:
        return coeff_rel_error(self, other) <= rtol


def poly_add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def poly_compose_scaled(p: Polynomial, tau: float) -> Polynomial:
    return p.compose_scaled(tau)


def poly_prod(factors: Iterable[Polynomial]) -> Polynomial:
    out = Polynomial([1.0])
    for f in factors:
        out = out * f
    return out


def coeff_rel_error(p: Polynomial, q: Polynomial) -> float:
    """Max coefficient difference relative to the largest coefficient of either."""
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p.coeffs
    b[: len(q)] = q.coeffs
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


def _companion(c: np.ndarray) -> np.ndarray:
    # c ascending, monic normalized; last row companion form
    n = c.size - 1
    M = np.zeros((n, n))
    if n > 1:
        M[np.arange(n - 1), np.arange(1, n)] = 1.0
    M[-1, :] = -c[:-1] / c[-1]
    return M


def roots(p: Polynomial) -> np.ndarray:
    """Roots of ``p`` with multiplicity.

    Eigenvalues of the (balanced) companion matrix followed by one Newton step
    per root. A nonzero constant has no roots; the zero polynomial raises.
    """
    if p.is_zero:
        raise DegenerateInputError("roots of the zero polynomial")
    c = p.coeffs
    n = p.degree
    if n == 0:
        return np.zeros(0, dtype=complex)
    # factor out exact zero roots to keep the companion matrix well posed
    k0 = int(np.flatnonzero(c)[0])
    c = c[k0:]
    if c.size > 1:
        r = np.linalg.eigvals(_companion(c)).astype(complex)
        dp = np.polyder(c[::-1])
        pv = np.polyval(c[::-1], r)
        dv = np.polyval(dp, r)
        ok = np.abs(dv) > 1e-300
        step = np.zeros_like(r)
        step[ok] = pv[ok] / dv[ok]
        refined = r - step
        # keep the Newton step only where it reduces the residual
        better = np.abs(np.polyval(c[::-1], refined)) < np.abs(pv)
        r = np.where(better, refined, r)
    else:
        r = np.zeros(0, dtype=complex)
    return np.concatenate([np.zeros(k0, dtype=complex), r])


@dataclass(frozen=True)
class HurwitzResult:
    stable: bool
    margin: float
    method: str

    def __bool__(self) -> bool:
        return self.stable


def _normalize_sign(p: Polynomial) -> np.ndarray:
    if p.is_zero:
        raise DegenerateInputError("Hurwitz test of the zero polynomial")
    c = p.coeffs
    if c[-1] < 0:
        c = -c
    return c / np.max(np.abs(c))


def routh_stable(p: Polynomial, tol_pivot: float = TOL_PIVOT) -> bool:
    """Routh-Hurwitz decision without computing roots.

    Raises
    ------
    IndeterminateRouthError
        When a first-column pivot is smaller than ``tol_pivot`` relative to the
        row above it. Callers fall back to :func:`roots`.
    """
    c = _normalize_sign(p)
    n = c.size - 1
    if n == 0:
        return True
    if np.any(c <= 0.0):
        return False
    d = c[::-1]
    r0 = d[0::2].copy()
    r1 = d[1::2].copy()
    if r1.size < r0.size:
        r1 = np.append(r1, 0.0)
    for k in range(n):
        # a vanishing row shows up here as a zero pivot
        scale = np.max(np.abs(r0))
        if abs(r1[0]) < tol_pivot * scale:
            raise IndeterminateRouthError("near-zero Routh pivot")
        if r1[0] < 0:
            return False
        if k == n - 1:
            break
        nxt = np.zeros_like(r0)
        m = r0.size - 1
        nxt[:m] = r0[1:] - r0[0] / r1[0] * r1[1:]
        r0, r1 = r1, nxt
    return True


def is_hurwitz(p: Polynomial, tol_pivot: float = TOL_PIVOT) -> HurwitzResult:
    """Open-left-half-plane test with stability margin ``-max Re(root)``.

    The Routh table decides; on an indeterminate pivot the root real parts
    decide instead. A nonzero constant is Hurwitz with infinite margin.
    """
    c = _normalize_sign(p)
    if c.size == 1:
        return HurwitzResult(True, float("inf"), "routh")
    r = roots(Polynomial(c))
    margin = float(-np.max(r.real))
    try:
        stable = routh_stable(Polynomial(c), tol_pivot)
        method = "routh"
    except IndeterminateRouthError:
        stable = margin > 0.0
        method = "roots"
    return HurwitzResult(stable, margin, method)


def _match_common(r1: np.ndarray, r2: np.ndarray, tol: float) -> list[tuple[int, int]]:
    pairs = []
    used = set()
    for i, a in enumerate(r1):
        if r2.size == 0:
            break
        d = np.abs(r2 - a)
        d[list(used)] = np.inf
        j = int(np.argmin(d))
        scale = max(1.0, abs(a))
        if d[j] < tol * scale:
            pairs.append((i, j))
            used.add(j)
    return pairs


class RationalFunction:
    """Numerator/denominator pair of real polynomials.

    No cancellation happens implicitly; :meth:`cancel` returns the coprime
    form and :meth:`is_coprime` checks it.
    """

    __slots__ = ("num", "den")

    def __init__(self, num, den):
        num = num if isinstance(num, Polynomial) else Polynomial(num)
        den = den if isinstance(den, Polynomial) else Polynomial(den)
        if den.is_zero:
            raise DegenerateInputError("zero denominator")
        self.num = num
        self.den = den

    def __repr__(self) -> str:
        return f"RationalFunction(num={self.num.coeffs.tolist()}, den={self.den.coeffs.tolist()})"

    @property
    def relative_degree(self) -> int:
        return self.den.degree - self.num.degree

    @property
    def is_proper(self) -> bool:
        return self.num.is_zero or self.relative_degree >= 0

    @property
    def is_strictly_proper(self) -> bool:
        return self.num.is_zero or self.relative_degree >= 1

    @property
    def high_frequency_gain(self) -> float:
        """Leading-coefficient ratio, ``lim s**nu * G(s)``."""
        return self.num.lead / self.den.lead

    def __call__(self, s):
        return self.num(s) / self.den(s)

    def dc_gain(self) -> float:
        return float(self.num.coeffs[0] / self.den.coeffs[0])

    def normalized(self) -> "RationalFunction":
        """Same function with monic denominator."""
        k = self.den.lead
        return RationalFunction(self.num / k, self.den / k)

    def common_roots(self, tol: float = TOL_COMMON_ROOT) -> np.ndarray:
        if self.num.is_zero or self.num.degree == 0 or self.den.degree == 0:
            return np.zeros(0, dtype=complex)
        rn = roots(self.num)
        rd = roots(self.den)
        pairs = _match_common(rn, rd, tol)
        return np.array([0.5 * (rn[i] + rd[j]) for i, j in pairs], dtype=complex)

    def is_coprime(self, tol: float = TOL_COMMON_ROOT) -> bool:
        return self.common_roots(tol).size == 0

    def cancel(self, tol: float = TOL_COMMON_ROOT) -> "RationalFunction":
        common = self.common_roots(tol)
        if common.size == 0:
            return self
        # pair conjugates so the removed factor is real
        common = _realify(common)
        f = Polynomial.from_roots(common)
        qn, _ = self.num.divmod(f)
        qd, _ = self.den.divmod(f)
        return RationalFunction(qn, qd)

    def __mul__(self, other: "RationalFunction") -> "RationalFunction":
        return RationalFunction(self.num * other.num, self.den * other.den)

    def inverse(self) -> "RationalFunction":
        return RationalFunction(self.den, self.num)

    def allclose(self, other: "RationalFunction", rtol: float = 1e-8) -> bool:
        a = self.normalized()
        b = other.normalized()
        return coeff_rel_error(a.num, b.num) <= rtol and coeff_rel_error(a.den, b.den) <= rtol


def _realify(r: np.ndarray) -> np.ndarray:
    out = []
    for z in r:
        if abs(z.imag) < 1e-9 * max(1.0, abs(z)):
            out.append(complex(z.real, 0.0))
        elif z.imag > 0:
            out.extend([z, z.conjugate()])
    return np.array(out, dtype=complex)
