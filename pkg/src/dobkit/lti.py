"""SISO plant models: realization, relative degree and the normal form.

The normal form splits the state into the output chain ``x`` (``y, y', ...``)
and the internal dynamics ``z``::

    x_i'  = x_{i+1},                 i < nu
    x_nu' = phi x + psi z + g u + g d
    z'    = S z + G x + d_z

with ``d`` and ``d_z`` linear in the disturbance and its time derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .poly import DegenerateInputError, Polynomial, RationalFunction, is_hurwitz

RANK_RTOL = 1e-9
TOL_MARKOV = 1e-9
COND_MAX = 1e12


class PlantError(ValueError):
    """Base class for ill-posed plant descriptions."""


class NotCoprimeError(PlantError):
    pass


class ShapeError(PlantError):
    pass


class IllPosedPlantError(PlantError):
    pass


class ConversionError(PlantError):
    pass


def _rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > rtol * sv[0])) if sv[0] > 0 else 0


@dataclass(frozen=True, eq=False)
class StateSpacePlant:
    """``x' = A x + b u + E d``, ``y = c x``.

    ``b`` and ``c`` are stored as 1-D arrays of length ``n``; ``E`` is ``n x q``
    (``q`` may be zero).
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    E: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if b.size != n or c.size != n:
            raise ShapeError("b and c must have length n")
        E = np.zeros((n, 0)) if self.E is None else np.asarray(self.E, dtype=float)
        if E.ndim == 1:
            E = E.reshape(n, -1)
        if E.shape[0] != n:
            raise ShapeError("E must have n rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "E", E)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.E.shape[1]

    def controllability(self) -> np.ndarray:
        cols = [self.b]
        for _ in range(self.n - 1):
            cols.append(self.A @ cols[-1])
        return np.column_stack(cols)

    def observability(self) -> np.ndarray:
        rows = [self.c]
        for _ in range(self.n - 1):
            rows.append(rows[-1] @ self.A)
        return np.vstack(rows)

    def is_minimal(self) -> bool:
        return _rank(self.controllability()) == self.n and _rank(self.observability()) == self.n

    def transfer_function(self) -> RationalFunction:
        """``c (sI - A)^{-1} b`` from the characteristic polynomial and Markov parameters."""
        d = np.poly(self.A)[::-1].real  # ascending, monic
        n = self.n
        h = np.zeros(n + 1)
        v = self.b.copy()
        for k in range(1, n + 1):
            h[k] = self.c @ v
            v = self.A @ v
        # polynomial part of D(s) * sum_k h_k s^-k
        num = np.array([sum(d[p + k] * h[k] for k in range(1, n - p + 1)) for p in range(n)])
        return RationalFunction(Polynomial(num), Polynomial(d))

    def markov(self, k: int) -> float:
        """``c A^{k-1} b``."""
        return float(self.c @ np.linalg.matrix_power(self.A, k - 1) @ self.b)

    def with_disturbance(self, E) -> "StateSpacePlant":
        return StateSpacePlant(self.A, self.b, self.c, E)


def tf_to_statespace(P: RationalFunction, E=None) -> StateSpacePlant:
    """Controllable canonical realization of a strictly proper, coprime ``P``."""
    if not P.is_strictly_proper:
        raise ShapeError("transfer function must be strictly proper")
    if P.num.is_zero:
        raise IllPosedPlantError("zero transfer function")
    if not P.is_coprime():
        raise NotCoprimeError("numerator and denominator share roots; cancel first")
    Pn = P.normalized()
    n = Pn.den.degree
    A = np.zeros((n, n))
    A[np.arange(n - 1), np.arange(1, n)] = 1.0
    A[-1, :] = -Pn.den.coeffs[:-1]
    b = np.zeros(n)
    b[-1] = 1.0
    c = np.zeros(n)
    c[: Pn.num.coeffs.size] = Pn.num.coeffs
    return StateSpacePlant(A, b, c, E)


def realize_proper(C: RationalFunction) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """``(A, B, Cm, D)`` controllable canonical realization of a proper ``C``.

    Used for outer-loop controllers, which may have direct feedthrough. A
    static gain yields empty matrices.
    """
    if not C.is_proper:
        raise ShapeError("controller must be proper")
    Cn = C.normalized()
    n = Cn.den.degree
    if n == 0:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0), float(Cn.num.coeffs[0])
    num = np.zeros(n + 1)
    num[: Cn.num.coeffs.size] = Cn.num.coeffs
    D = num[n]
    resid = num[:n] - D * Cn.den.coeffs[:n]
    A = np.zeros((n, n))
    A[np.arange(n - 1), np.arange(1, n)] = 1.0
    A[-1, :] = -Cn.den.coeffs[:-1]
    B = np.zeros(n)
    B[-1] = 1.0
    return A, B, resid, float(D)


def relative_degree(plant: StateSpacePlant, tol: float = TOL_MARKOV) -> int:
    nA = max(np.linalg.norm(plant.A, 2), 1e-300)
    nb = np.linalg.norm(plant.b)
    nc = np.linalg.norm(plant.c)
    v = plant.b.copy()
    for i in range(1, plant.n + 1):
        mk = float(plant.c @ v)
        if abs(mk) > tol * nc * nb * max(nA, 1.0) ** (i - 1):
            return i
        v = plant.A @ v
    raise IllPosedPlantError("no Markov parameter c A^(i-1) b is nonzero for i <= n")


@dataclass(frozen=True, eq=False)
class NormalForm:
    """Normal-form data of a plant together with its coordinate change.

    ``[x; z] = T x_orig + [Ebar; 0] dbar`` where ``dbar`` stacks the
    disturbance and its first ``nu - 2`` derivatives.
    """

    nu: int
    phi: np.ndarray
    psi: np.ndarray
    g: float
    S: np.ndarray
    G: np.ndarray
    T: np.ndarray
    Phi: np.ndarray
    Ebar: np.ndarray
    Kd: np.ndarray
    Kz: np.ndarray
    cond_T: float
    tf: RationalFunction = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.S.shape[0]

    @property
    def n(self) -> int:
        return self.nu + self.m

    @property
    def q(self) -> int:
        return self.Kd.size // self.nu

    def system_matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(A, b, c)`` of the normal form in ``(x, z)`` coordinates."""
        nu, m = self.nu, self.m
        A = np.zeros((nu + m, nu + m))
        A[np.arange(nu - 1), np.arange(1, nu)] = 1.0
        A[nu - 1, :nu] = self.phi
        A[nu - 1, nu:] = self.psi
        A[nu:, :nu] = self.G
        A[nu:, nu:] = self.S
        b = np.zeros(nu + m)
        b[nu - 1] = self.g
        c = np.zeros(nu + m)
        c[0] = 1.0
        return A, b, c

    def as_plant(self) -> StateSpacePlant:
        A, b, c = self.system_matrices()
        return StateSpacePlant(A, b, c)

    def transfer_function(self) -> RationalFunction:
        return self.as_plant().transfer_function()

    def zeros(self) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.S)

    def is_minimum_phase(self) -> bool:
        if self.m == 0:
            return True
        return is_hurwitz(Polynomial(np.poly(self.S)[::-1].real)).stable

    def f(self, x, z) -> float:
        return float(self.phi @ x + self.psi @ z)

    def disturbance_terms(self, dstack: np.ndarray) -> tuple[float, np.ndarray]:
        """``(d, d_z)`` from ``dstack = [d~, d~', ..., d~^(nu-1)]`` (flattened)."""
        return float(self.Kd @ dstack), self.Kz @ dstack

    def lift(self, x_orig: np.ndarray, dbar: np.ndarray | None = None) -> np.ndarray:
        """Map an original-coordinate state to ``[x; z]``."""
        xz = self.T @ x_orig
        if dbar is not None and self.Ebar.size:
            xz[: self.nu] += self.Ebar @ dbar
        return xz

    def to_dict(self) -> dict:
        zs = self.zeros()
        return {
            "nu": self.nu,
            "m": self.m,
            "phi": self.phi.tolist(),
            "psi": self.psi.tolist(),
            "g": self.g,
            "S": self.S.tolist(),
            "G": self.G.tolist(),
            "zeros": [[float(z.real), float(z.imag)] for z in zs],
            "is_minimum_phase": self.is_minimum_phase(),
            "cond_T": self.cond_T,
        }


def _left_complement(b: np.ndarray, rows: np.ndarray, m: int) -> np.ndarray:
    """``m`` orthonormal rows orthogonal to ``b`` and to the given rows."""
    n = b.size
    Q, _ = np.linalg.qr(b.reshape(n, 1), mode="complete")
    W = Q[:, 1:].T  # basis of the left nullspace of b
    if m == 0:
        return np.zeros((0, n))
    if rows.shape[0] == 0:
        coords = np.eye(n - 1)
    else:
        Cw = rows @ W.T
        _, _, Vt = np.linalg.svd(Cw)
        coords = Vt[rows.shape[0]:]
    return coords[:m] @ W


def _output_coordinates(T_top: np.ndarray, Phi: np.ndarray, A: np.ndarray, nu: int) -> np.ndarray:
    """Re-choose ``Phi`` so that ``G x`` only involves ``x_1``.

    ``z' = Phi x_orig + K x`` with ``K`` solved backwards from the chain
    structure; for ``m = 1`` the remaining scale is fixed so that ``G_1 = 1``.
    """
    m = Phi.shape[0]
    T = np.vstack([T_top, Phi])
    Ti = np.linalg.inv(T)
    S = Phi @ A @ Ti[:, nu:]
    G = Phi @ A @ Ti[:, :nu]
    K = np.zeros((m, nu))
    # column j of K multiplies x_{j+1}; K[:, nu-1] = 0 keeps Phi' b = 0
    for j in range(nu - 1, 0, -1):
        K[:, j - 1] = S @ K[:, j] - G[:, j]
    Phi2 = Phi + K @ T_top
    if m == 1:
        G1 = -S @ K[:, 0] + G[:, 0]
        if abs(G1[0]) > 1e-12:
            Phi2 = Phi2 / G1[0]
    return Phi2


def to_normal_form(plant: StateSpacePlant, coords: str = "qr") -> NormalForm:
    """Convert a minimal plant to normal form.

    Parameters
    ----------
    plant : StateSpacePlant
    coords : {"qr", "output"}
        ``"qr"`` completes ``T`` with an orthonormal basis of the left
        nullspace of ``b``; ``"output"`` additionally changes the ``z``
        coordinates so that ``G x = G_1 x_1``.
    """
    if not plant.is_minimal():
        raise IllPosedPlantError("plant realization is not minimal")
    nu = relative_degree(plant)
    A, b, c, E = plant.A, plant.b, plant.c, plant.E
    n = plant.n
    m = n - nu
    rows = [c]
    for _ in range(nu):
        rows.append(rows[-1] @ A)
    cA = np.vstack(rows)  # c A^0 .. c A^nu
    T_top = cA[:nu]
    Phi = _left_complement(b, T_top[: nu - 1], m)
    if coords == "output" and m > 0:
        Phi = _output_coordinates(T_top, Phi, A, nu)
    elif coords not in ("qr", "output"):
        raise ValueError(f"unknown coordinate choice {coords!r}")
    T = np.vstack([T_top, Phi])
    condT = float(np.linalg.cond(T))
    if not np.isfinite(condT) or condT > COND_MAX:
        raise ConversionError(f"transformation matrix is singular (cond={condT:.3g})")
    Ti = np.linalg.inv(T)
    Ta, Tb = Ti[:, :nu], Ti[:, nu:]
    g = float(cA[nu - 1] @ b)
    phi = cA[nu] @ Ta
    psi = cA[nu] @ Tb
    S = Phi @ A @ Tb
    G = Phi @ A @ Ta

    q = plant.q
    cAE = [cA[i] @ E for i in range(nu + 1)]  # each length q
    Ebar = np.zeros((nu, q * (nu - 1)))
    for i in range(1, nu):
        for j in range(i):
            Ebar[i, j * q:(j + 1) * q] = cAE[i - 1 - j]
    # d and d_z act on dstack = [d~, d~', ..., d~^(nu-1)]
    Kd = np.zeros(q * nu)
    lifted = -(cA[nu] @ Ta @ Ebar)  # acts on dbar (first nu-1 blocks)
    Kd[: q * (nu - 1)] += lifted
    for j in range(1, nu + 1):
        Kd[(j - 1) * q: j * q] += cAE[nu - j]
    Kd = Kd / g
    Kz = np.zeros((m, q * nu))
    Kz[:, :q] += Phi @ E
    Kz[:, : q * (nu - 1)] -= Phi @ A @ Ta @ Ebar
    return NormalForm(
        nu=nu, phi=phi, psi=psi, g=g, S=S, G=G, T=T, Phi=Phi, Ebar=Ebar,
        Kd=Kd, Kz=Kz, cond_T=condT, tf=plant.transfer_function(),
    )


def zeros_by_rosenbrock(plant: StateSpacePlant) -> np.ndarray:
    """Finite values where the Rosenbrock system matrix drops rank."""
    n = plant.n
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = plant.A
    M[:n, n] = plant.b
    M[n, :n] = plant.c
    N = np.zeros((n + 1, n + 1))
    N[:n, :n] = np.eye(n)
    w = scipy.linalg.eigvals(M, N)
    w = w[np.isfinite(w)]
    return w[np.abs(w) < 1e10]


def is_minimum_phase(plant: StateSpacePlant) -> bool:
    return to_normal_form(plant).is_minimum_phase()


@dataclass(frozen=True, eq=False)
class NominalModel:
    """Nominal plant in the normal-form coordinates used by the DOB."""

    nf: NormalForm
    P: RationalFunction

    @property
    def nu(self) -> int:
        return self.nf.nu

    @property
    def m(self) -> int:
        return self.nf.m

    @property
    def phi(self) -> np.ndarray:
        return self.nf.phi

    @property
    def psi(self) -> np.ndarray:
        return self.nf.psi

    @property
    def g(self) -> float:
        return self.nf.g

    @property
    def S(self) -> np.ndarray:
        return self.nf.S

    @property
    def G(self) -> np.ndarray:
        return self.nf.G

    def f(self, x, z) -> float:
        return self.nf.f(x, z)

    def check_against(self, true_g: float) -> None:
        if np.sign(true_g) != np.sign(self.g):
            raise PlantError("nominal high-frequency gain must share the sign of the plant's")


def nominal_model(P_n: RationalFunction) -> NominalModel:
    """Normal form of a nominal transfer function (``G`` depends on ``x_1`` only)."""
    P_n = P_n.cancel()
    nf = to_normal_form(tf_to_statespace(P_n), coords="output")
    if not nf.is_minimum_phase():
        raise PlantError("nominal model must be minimum phase")
    return NominalModel(nf=nf, P=P_n)


def plant_from_dict(spec: dict) -> StateSpacePlant:
    """Plant from ``{"tf": {...}}`` or ``{"ss": {...}}`` (ascending coefficients)."""
    if "tf" in spec:
        tf = RationalFunction(spec["tf"]["num"], spec["tf"]["den"])
        E = spec["tf"].get("E")
        plant = tf_to_statespace(tf)
        if E == "input" or E is None:
            return plant.with_disturbance(plant.b.reshape(-1, 1))
        return plant.with_disturbance(np.asarray(E, dtype=float))
    if "ss" in spec:
        ss = spec["ss"]
        return StateSpacePlant(ss["A"], ss["b"], ss["c"], ss.get("E"))
    raise DegenerateInputError("plant spec needs a 'tf' or 'ss' entry")
