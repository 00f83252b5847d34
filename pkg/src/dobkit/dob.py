"""State-space realization of the disturbance-observer controller.

The controller has three blocks:

* ``Q_A`` acting on the applied input ``u`` with state ``p`` and output ``y_p``;
* ``P_n^{-1} Q_B`` acting on the measured output ``y``, realized as the cascade
  of the ``Q_B`` state ``q`` (whose output and its derivatives estimate the
  plant's output chain ``x``) and the nominal zero dynamics ``z_n``;
* the control law ``u = ubar + y_p - uhat_n``, optionally clamped.

The second block's state is ordered ``w = [z_n; q]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lti import NominalModel, PlantError, realize_proper
from .poly import RationalFunction
from .qfilter import QFilterSpec, pf_polynomial


class RealizationError(PlantError):
    pass


class DiagnosticUnavailable(RuntimeError):
    """Diagnostic coordinates are only defined for ``nu = mu = 2``."""


def _filter_matrices(spec: QFilterSpec):
    """Companion realization of ``Q`` with input gain ``c_0/tau^mu``.

    Returns ``(A, kappa, w)`` where ``x' = A x + e_mu kappa v`` and the filter
    output is ``w @ x``. With ``c = (a_0, 0, ...)``, ``w = e_1``.
    """
    mu, tau = spec.mu, spec.tau
    A = np.zeros((mu, mu))
    A[np.arange(mu - 1), np.arange(1, mu)] = 1.0
    A[-1, :] = [-spec.a[j] / tau ** (mu - j) for j in range(mu)]
    kappa = spec.c[0] / tau ** mu
    w = np.array([spec.c[i] * tau ** i / spec.c[0] for i in range(mu)])
    return A, kappa, w


@dataclass(frozen=True, eq=False)
class DOBRealization:
    """Assembled controller matrices.

    ``p' = Ap p + Bp u_applied``, ``y_p = Cp p``;
    ``w' = Aw w + Bw y``, ``uhat_n = Hw w + Jw y``.
    """

    nominal: NominalModel
    spec: QFilterSpec
    Ap: np.ndarray
    Bp: np.ndarray
    Cp: np.ndarray
    Aw: np.ndarray
    Bw: np.ndarray
    Hw: np.ndarray
    Jw: float
    Mx: np.ndarray  # q -> estimate of x
    sat_level: float | None = None
    _dq: tuple = field(default=None, repr=False)  # (L, l): v^(nu) = L q + l y

    @property
    def tau(self) -> float:
        return self.spec.tau

    @property
    def mu(self) -> int:
        return self.spec.mu

    @property
    def qa_state_dim(self) -> int:
        return self.mu

    @property
    def inv_block_dim(self) -> int:
        return self.nominal.m + self.mu

    def with_saturation(self, level: float | None) -> "DOBRealization":
        if level is not None and not level > 0:
            raise ValueError("saturation level must be positive")
        return DOBRealization(self.nominal, self.spec, self.Ap, self.Bp, self.Cp, self.Aw, self.Bw,
                              self.Hw, self.Jw, self.Mx, level, self._dq)

    def saturate(self, u: float) -> float:
        if self.sat_level is None:
            return u
        return min(max(u, -self.sat_level), self.sat_level)

    def split(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.nominal.m
        return w[:m], w[m:]

    def uhat(self, w: np.ndarray, y: float) -> float:
        return float(self.Hw @ w + self.Jw * y)

    def uhat_derivative_form(self, w: np.ndarray, y: float) -> float:
        """``(1/g_n) (v^(nu) - f_n(q-estimate, z_n))`` computed from ``q'``."""
        zn, q = self.split(w)
        L, l = self._dq
        vnu = float(L @ q + l * y)
        return (vnu - self.nominal.f(self.Mx @ q, zn)) / self.nominal.g

    def control_output(self, ubar: float, y: float, p: np.ndarray, w: np.ndarray) -> tuple[float, float]:
        """Return ``(u, u_applied)``; they differ only when the clamp is active."""
        u = ubar + float(self.Cp @ p) - self.uhat(w, y)
        return u, self.saturate(u)

    def qa_response(self, s) -> np.ndarray:
        """Frequency response ``u -> y_p``."""
        s = np.atleast_1d(s)
        I = np.eye(self.mu)
        return np.array([self.Cp @ np.linalg.solve(si * I - self.Ap, self.Bp) for si in s])

    def inv_response(self, s) -> np.ndarray:
        """Frequency response ``y -> uhat_n``."""
        s = np.atleast_1d(s)
        I = np.eye(self.Aw.shape[0])
        return np.array([self.Hw @ np.linalg.solve(si * I - self.Aw, self.Bw) + self.Jw for si in s])

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "mu": self.mu,
            "qa_state_dim": self.qa_state_dim,
            "inv_block_dim": self.inv_block_dim,
            "qfilter": self.spec.to_dict(),
            "Ap": self.Ap.tolist(),
            "Bp": self.Bp.tolist(),
            "Cp": self.Cp.tolist(),
            "Aw": self.Aw.tolist(),
            "Bw": self.Bw.tolist(),
            "Hw": self.Hw.tolist(),
            "Jw": self.Jw,
            "sat_level": self.sat_level,
        }


def realize(nominal: NominalModel, spec: QFilterSpec, sat_level: float | None = None) -> DOBRealization:
    """Build the controller for a nominal model and a Q-filter (``Q_A = Q_B``)."""
    if not nominal.nf.is_minimum_phase():
        raise RealizationError("nominal model is not minimum phase")
    nu, m, mu = nominal.nu, nominal.m, spec.mu
    spec.check_plant(nu)
    A, kappa, wv = _filter_matrices(spec)
    e_mu = np.zeros(mu)
    e_mu[-1] = 1.0

    # q-chain: v^(k) = sum_i wv_i q_{i+1+k} for k < nu (no feedthrough by the
    # relative-degree constraint); v^(nu) needs q'_mu where the chain ends.
    Mx = np.zeros((nu, mu))
    for k in range(nu):
        for i, wi in enumerate(wv):
            if wi != 0.0:
                Mx[k, i + k] += wi
    L = np.zeros(mu)
    l = 0.0
    for i, wi in enumerate(wv):
        if wi == 0.0:
            continue
        j = i + nu  # index of q_{i+nu+1} (0-based) whose derivative we need
        if j < mu:
            L[j] += wi
        else:
            L += wi * A[-1, :]
            l += wi * kappa

    Sn, Gn, phin, psin, gn = nominal.S, nominal.G, nominal.phi, nominal.psi, nominal.g
    Aw = np.zeros((m + mu, m + mu))
    Aw[:m, :m] = Sn
    Aw[:m, m:] = Gn @ Mx
    Aw[m:, m:] = A
    Bw = np.zeros(m + mu)
    Bw[m:] = kappa * e_mu
    Hw = np.zeros(m + mu)
    Hw[:m] = -psin / gn
    Hw[m:] = (L - phin @ Mx) / gn
    Jw = l / gn

    return DOBRealization(nominal=nominal, spec=spec, Ap=A.copy(), Bp=kappa * e_mu, Cp=wv.copy(),
                          Aw=Aw, Bw=Bw, Hw=Hw, Jw=float(Jw), Mx=Mx, sat_level=sat_level, _dq=(L, l))


def inverse_filter_tf(nominal: NominalModel, spec: QFilterSpec) -> RationalFunction:
    """``P_n^{-1}(s) Q_B(s)`` as a rational function (reference for the realization)."""
    from .qfilter import qfilter_tf

    Q = qfilter_tf(spec)
    return RationalFunction(nominal.P.den * Q.num, nominal.P.num * Q.den)


@dataclass
class ClosedLoop:
    """Linear closed loop of plant, DOB and outer controller, saturation aside.

    State ``X = [x_plant, p, w, x_c]``. With ``u`` the applied input,
    ``X' = A0 X + bu u + br r + bd dist`` and the unclamped law is
    ``u_raw = ku X + kr r``.
    """

    A0: np.ndarray
    bu: np.ndarray
    br: np.ndarray
    ku: np.ndarray
    kr: float
    cy: np.ndarray
    cubar: np.ndarray
    dims: dict

    def matrix(self) -> np.ndarray:
        """State matrix with the clamp inactive."""
        return self.A0 + np.outer(self.bu, self.ku)


def assemble_closed_loop(A: np.ndarray, b: np.ndarray, c: np.ndarray, ctrl: DOBRealization | None,
                         C: RationalFunction) -> ClosedLoop:
    """Interconnect plant ``(A, b, c)``, the DOB and ``C`` acting on ``r - y``.

    With ``ctrl=None`` the DOB is bypassed (``u = ubar``) but no controller
    states are added.
    """
    Ac, Bc, Cc, Dc = realize_proper(C)
    n = A.shape[0]
    nc = Ac.shape[0]
    mu = ctrl.mu if ctrl is not None else 0
    nw = ctrl.Aw.shape[0] if ctrl is not None else 0
    N = n + mu + nw + nc
    ip, iw, ic = n, n + mu, n + mu + nw
    A0 = np.zeros((N, N))
    A0[:n, :n] = A
    bu = np.zeros(N)
    bu[:n] = b
    br = np.zeros(N)
    cy = np.zeros(N)
    cy[:n] = c
    # ubar = Cc xc + Dc (r - y)
    cubar = np.zeros(N)
    cubar[ic:] = Cc
    cubar[:n] -= Dc * c
    A0[ic:, ic:] = Ac
    A0[ic:, :n] -= np.outer(Bc, c)
    br[ic:] = Bc
    ku = cubar.copy()
    kr = Dc
    if ctrl is not None:
        A0[ip:iw, ip:iw] = ctrl.Ap
        bu[ip:iw] = ctrl.Bp
        A0[iw:ic, iw:ic] = ctrl.Aw
        A0[iw:ic, :n] += np.outer(ctrl.Bw, c)
        ku[ip:iw] += ctrl.Cp
        ku[iw:ic] -= ctrl.Hw
        ku[:n] -= ctrl.Jw * c
    dims = {"plant": (0, n), "p": (ip, iw), "w": (iw, ic), "xc": (ic, N)}
    return ClosedLoop(A0=A0, bu=bu, br=br, ku=ku, kr=kr, cy=cy, cubar=cubar, dims=dims)


@dataclass(frozen=True)
class DiagnosticCoordinates:
    qbar: np.ndarray  # (len(t), 2)
    ptilde: np.ndarray  # (len(t), 2)


def observer_coordinates(ctrl: DOBRealization, q: np.ndarray, p: np.ndarray, y: np.ndarray,
                         ydot: np.ndarray) -> DiagnosticCoordinates:
    """High-gain-observer and fast coordinates along a trajectory.

    ``qbar = (q1 + (a1/a0) tau q2, q2)`` and
    ``ptilde = (p1 - q2'/g_n, p2 - q2''/g_n)``; ``ydot`` is the plant's ``x_2``.
    Only the ``nu = mu = 2`` all-pole filter is supported.
    """
    spec = ctrl.spec
    if ctrl.nominal.nu != 2 or spec.mu != 2 or spec.c[1] != 0.0:
        raise DiagnosticUnavailable("diagnostic coordinates need nu = mu = 2 and c = (a0, 0)")
    a0, a1 = spec.a
    tau = spec.tau
    q = np.atleast_2d(q)
    p = np.atleast_2d(p)
    q1, q2 = q[:, 0], q[:, 1]
    qbar = np.column_stack([q1 + (a1 / a0) * tau * q2, q2])
    q2d = -a0 / tau**2 * q1 - a1 / tau * q2 + a0 / tau**2 * y
    q2dd = -a0 / tau**2 * q2 - a1 / tau * q2d + a0 / tau**2 * ydot
    gn = ctrl.nominal.g
    ptilde = np.column_stack([p[:, 0] - q2d / gn, p[:, 1] - q2dd / gn])
    return DiagnosticCoordinates(qbar=qbar, ptilde=ptilde)


def fast_matrix(spec: QFilterSpec, g: float, g_n: float) -> np.ndarray:
    """System matrix of the fast coordinates; its spectrum is ``roots(p_f)/tau``."""
    pf = pf_polynomial(spec, g, g_n)
    mu, tau = spec.mu, spec.tau
    M = np.zeros((mu, mu))
    M[np.arange(mu - 1), np.arange(1, mu)] = 1.0
    M[-1, :] = [-pf.coeffs[j] / tau ** (mu - j) for j in range(mu)]
    return M


def default_sat_level(ubar_nominal: np.ndarray, factor: float = 3.0) -> float:
    """``factor`` times the peak input of the nominal closed loop."""
    peak = float(np.max(np.abs(ubar_nominal))) if len(ubar_nominal) else 0.0
    if not math.isfinite(peak) or peak <= 0:
        raise ValueError("nominal input peak must be positive and finite")
    return factor * peak
