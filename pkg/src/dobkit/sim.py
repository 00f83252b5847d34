"""Closed-loop simulation of the uncertain plant with DOB against its nominal twin.

Every run integrates, side by side,

* the real loop: plant in normal-form coordinates, DOB, outer controller ``C``;
* the nominal loop: nominal normal form driven by its own copy of ``C``, started
  from ``(x(0), z_n(0))``;
* the nominal zero dynamics driven by the real ``x``, needed to evaluate the
  ideal input ``u_desired``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .dob import DOBRealization, assemble_closed_loop, observer_coordinates, realize
from .lti import NominalModel, NormalForm, StateSpacePlant, realize_proper, to_normal_form
from .poly import RationalFunction
from .qfilter import QFilterSpec
from .stability import UnmodelledDynamicsError

log = logging.getLogger(__name__)

DIVERGENCE = 1e12
N_SAMPLES = 2000
DEFAULT_HORIZON = 10.0


class SolverError(RuntimeError):
    pass


# -- signals -----------------------------------------------------------------

class Signal:
    """Smooth scalar signal with closed-form derivatives."""

    def derivs(self, t: float, order: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t: float) -> float:
        return float(self.derivs(t, 0)[0])

    def __add__(self, other: "Signal") -> "Signal":
        return Sum((self, other))


@dataclass(frozen=True)
class Zero(Signal):
    def derivs(self, t, order):
        return np.zeros(order + 1)


@dataclass(frozen=True)
class Constant(Signal):
    value: float

    def derivs(self, t, order):
        out = np.zeros(order + 1)
        out[0] = self.value
        return out


@dataclass(frozen=True)
class Sinusoid(Signal):
    amplitude: float
    omega: float
    phase: float = 0.0

    def derivs(self, t, order):
        arg = self.omega * t + self.phase
        k = np.arange(order + 1)
        return self.amplitude * self.omega**k * np.sin(arg + k * np.pi / 2)


@dataclass(frozen=True)
class PolySignal(Signal):
    """``sum_i coeffs[i] t**i``."""

    coeffs: tuple

    def derivs(self, t, order):
        c = np.asarray(self.coeffs, dtype=float)
        out = np.zeros(order + 1)
        for k in range(order + 1):
            if c.size:
                out[k] = np.polyval(c[::-1], t)
                c = c[1:] * np.arange(1, c.size)
        return out


@dataclass(frozen=True)
class Sum(Signal):
    parts: tuple

    def derivs(self, t, order):
        return sum((p.derivs(t, order) for p in self.parts), np.zeros(order + 1))


def signal_from_dict(spec) -> Signal:
    if spec is None:
        return Zero()
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if isinstance(spec, list):
        return Sum(tuple(signal_from_dict(s) for s in spec))
    kind = spec["kind"]
    if kind == "zero":
        return Zero()
    if kind == "constant":
        return Constant(float(spec["value"]))
    if kind == "sinusoid":
        return Sinusoid(float(spec["amplitude"]), float(spec["omega"]), float(spec.get("phase", 0.0)))
    if kind in ("polynomial", "polynomial-in-t"):
        return PolySignal(tuple(float(v) for v in spec["coeffs"]))
    if kind == "sum":
        return Sum(tuple(signal_from_dict(s) for s in spec["parts"]))
    raise ValueError(f"unknown signal kind {kind!r}")


# -- traces ------------------------------------------------------------------

@dataclass(frozen=True)
class InitialConditions:
    x: Sequence[float] | None = None
    z: Sequence[float] | None = None
    p: Sequence[float] | None = None
    q: Sequence[float] | None = None
    zn: Sequence[float] | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "InitialConditions":
        d = d or {}
        return cls(**{k: d.get(k) for k in ("x", "z", "p", "q", "zn")})


@dataclass
class SimulationTrace:
    t: np.ndarray
    y: np.ndarray
    y_nominal: np.ndarray
    u: np.ndarray
    u_raw: np.ndarray
    u_desired: np.ndarray
    u_sat_active: np.ndarray
    x: np.ndarray
    z: np.ndarray
    p: np.ndarray
    q: np.ndarray
    zn: np.ndarray
    ubar_nominal: np.ndarray
    diverged: bool
    tau: float | None
    meta: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols = ["t", "y", "y_nominal", "u", "u_desired", "u_sat_active"]
        cols += [f"x{i + 1}" for i in range(self.x.shape[1])]
        cols += [f"z{i + 1}" for i in range(self.z.shape[1])]
        cols += [f"p{i + 1}" for i in range(self.p.shape[1])]
        cols += [f"q{i + 1}" for i in range(self.q.shape[1])]
        cols += [f"zn{i + 1}" for i in range(self.zn.shape[1])]
        return cols

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.y, self.y_nominal, self.u, self.u_desired,
                                self.u_sat_active.astype(float), self.x, self.z, self.p, self.q, self.zn])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.table():
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class RecoveryMetrics:
    sup_dev: float
    sup_dev_post: float
    u_tracking: float
    steady_state_err: float
    T_settle: float

    def to_dict(self) -> dict:
        return {"sup_dev": self.sup_dev, "sup_dev_post": self.sup_dev_post,
                "u_tracking": self.u_tracking, "steady_state_err": self.steady_state_err,
                "T_settle": self.T_settle}


# -- assembly ----------------------------------------------------------------

@dataclass
class _Model:
    A0: np.ndarray
    bu: np.ndarray
    br: np.ndarray
    Bd: np.ndarray
    ku: np.ndarray
    kr: float
    slices: dict
    nf: NormalForm
    nominal: NominalModel
    ctrl: DOBRealization | None
    cubar: np.ndarray
    cubar_nom: np.ndarray
    kr_nom: float
    dist: tuple
    ref: Signal

    def dstack(self, t: float) -> np.ndarray:
        nu, q = self.nf.nu, len(self.dist)
        if q == 0:
            return np.zeros(0)
        D = np.array([s.derivs(t, nu - 1) for s in self.dist])  # (q, nu)
        return D.T.reshape(-1)

    def u_raw(self, X: np.ndarray, t: float) -> float:
        return float(self.ku @ X + self.kr * self.ref(t))

    def rhs_function(self):
        """Fast closure over the model matrices for the integrators."""
        A0, bu, br, ku, kr, Bd, ref = self.A0, self.bu, self.br, self.ku, self.kr, self.Bd, self.ref
        sat = self.ctrl.sat_level if self.ctrl is not None else None
        dstack = self.dstack if Bd.shape[1] else None
        const_ref = ref.value if isinstance(ref, Constant) else (0.0 if isinstance(ref, Zero) else None)

        def f(t, X):
            r = const_ref if const_ref is not None else ref(t)
            u = ku @ X + kr * r
            if sat is not None:
                u = min(max(u, -sat), sat)
            dX = A0 @ X + bu * u + br * r
            if dstack is not None:
                dX += Bd @ dstack(t)
            return dX

        return f

    def rhs(self, t: float, X: np.ndarray) -> np.ndarray:
        return self.rhs_function()(t, X)


def _as_normal_form(plant) -> NormalForm:
    if isinstance(plant, NormalForm):
        return plant
    if isinstance(plant, StateSpacePlant):
        return to_normal_form(plant)
    raise TypeError("plant must be a NormalForm or StateSpacePlant")


def _build(nf: NormalForm, nominal: NominalModel, ctrl: DOBRealization | None, C: RationalFunction,
           ref: Signal, dist) -> _Model:
    if nf.nu != nominal.nu:
        raise UnmodelledDynamicsError("plant and nominal relative degrees differ")
    dist = tuple(dist) if isinstance(dist, (list, tuple)) else ((dist,) if dist is not None else ())
    if dist and len(dist) != nf.q:
        raise ValueError(f"{len(dist)} disturbance signals for a plant with q={nf.q}")
    A, b, c = nf.system_matrices()
    cl = assemble_closed_loop(A, b, c, ctrl, C)
    Ac, Bc, Cc, Dc = realize_proper(C)
    nu, m, mn, nc = nf.nu, nf.m, nominal.m, Ac.shape[0]
    N0 = cl.A0.shape[0]
    i_xN, i_zN, i_xcN, i_zD = N0, N0 + nu, N0 + nu + mn, N0 + nu + mn + nc
    N = i_zD + mn
    A0 = np.zeros((N, N))
    A0[:N0, :N0] = cl.A0
    bu = np.zeros(N)
    bu[:N0] = cl.bu
    br = np.zeros(N)
    br[:N0] = cl.br
    ku = np.zeros(N)
    ku[:N0] = cl.ku
    cubar = np.zeros(N)
    cubar[:N0] = cl.cubar

    # nominal loop: ubar_N = Cc xcN + Dc (r - xN1)
    cubar_nom = np.zeros(N)
    cubar_nom[i_xcN:i_zD] = Cc
    cubar_nom[i_xN] -= Dc
    sx, sz = slice(i_xN, i_xN + nu), slice(i_zN, i_zN + mn)
    for k in range(nu - 1):
        A0[i_xN + k, i_xN + k + 1] = 1.0
    A0[i_xN + nu - 1, sx] += nominal.phi
    A0[i_xN + nu - 1, sz] += nominal.psi
    A0[i_xN + nu - 1, :] += nominal.g * cubar_nom
    br[i_xN + nu - 1] += nominal.g * Dc
    A0[sz, sz] = nominal.S
    A0[sz, sx] = nominal.G
    if nc:
        A0[i_xcN:i_zD, i_xcN:i_zD] = Ac
        A0[i_xcN:i_zD, i_xN] -= Bc
        br[i_xcN:i_zD] = Bc
    # desired-input zero dynamics driven by the real x
    A0[i_zD:N, i_zD:N] = nominal.S
    A0[i_zD:N, 0:nu] = nominal.G

    Bd = np.zeros((N, nf.Kd.size if dist else 0))
    if dist:
        Bd[nu - 1, :] = nf.g * nf.Kd
        Bd[nu:nu + m, :] = nf.Kz
    slices = {
        "x": slice(0, nu), "z": slice(nu, nu + m),
        "p": slice(*cl.dims["p"]), "w": slice(*cl.dims["w"]), "xc": slice(*cl.dims["xc"]),
        "xN": sx, "zN": sz, "xcN": slice(i_xcN, i_zD), "zD": slice(i_zD, N),
    }
    return _Model(A0=A0, bu=bu, br=br, Bd=Bd, ku=ku, kr=cl.kr, slices=slices, nf=nf, nominal=nominal,
                  ctrl=ctrl, cubar=cubar, cubar_nom=cubar_nom, kr_nom=Dc, dist=dist, ref=ref)


def _state_scale(M: _Model) -> np.ndarray:
    """Diagonal ``d`` with ``X = d * X_int``.

    Filter states ``p_k`` and ``q_k`` behave like ``(k-1)``-th derivatives and
    grow as ``tau**-(k-1)``; integrating ``tau**(k-1)`` times them keeps the
    ``1/tau**mu`` gains out of the rounding noise seen by the step control.
    """
    d = np.ones(M.A0.shape[0])
    if M.ctrl is not None:
        tau = M.ctrl.tau
        k = np.arange(M.ctrl.mu, dtype=float)
        sp, sw = M.slices["p"], M.slices["w"]
        d[sp] = tau ** -k
        d[sw.start + M.nominal.m: sw.stop] = tau ** -k
    return d


def _scaled(M: _Model, d: np.ndarray) -> _Model:
    return replace(M, A0=M.A0 * d[None, :] / d[:, None], bu=M.bu / d, br=M.br / d,
                   Bd=M.Bd / d[:, None], ku=M.ku * d)


def _initial_state(M: _Model, ic: InitialConditions) -> np.ndarray:
    X = np.zeros(M.A0.shape[0])
    s = M.slices

    def put(sl, v):
        if v is not None:
            X[sl] = np.asarray(v, dtype=float)

    put(s["x"], ic.x)
    put(s["z"], ic.z)
    if M.ctrl is not None:
        put(s["p"], ic.p)
        mn = M.nominal.m
        w0 = np.zeros(s["w"].stop - s["w"].start)
        if ic.zn is not None:
            w0[:mn] = ic.zn
        if ic.q is not None:
            w0[mn:] = ic.q
        X[s["w"]] = w0
    put(s["xN"], ic.x)
    put(s["zN"], ic.zn)
    put(s["zD"], ic.zn)
    return X


def _rk4(M: _Model, X0: np.ndarray, t_out: np.ndarray, h_max: float):
    dt = t_out[1] - t_out[0]
    k = max(1, math.ceil(dt / h_max - 1e-12))
    h = dt / k
    out = np.empty((t_out.size, X0.size))
    out[0] = X0
    X = X0.copy()
    f = M.rhs_function()
    for i in range(1, t_out.size):
        t = t_out[i - 1]
        for j in range(k):
            tj = t + j * h
            k1 = f(tj, X)
            k2 = f(tj + h / 2, X + h / 2 * k1)
            k3 = f(tj + h / 2, X + h / 2 * k2)
            k4 = f(tj + h, X + h * k3)
            X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > DIVERGENCE:
            return out[:i], True, {"method": "rk4", "step": h}
        out[i] = X
    return out, False, {"method": "rk4", "step": h}


def _rk45(M: _Model, X0: np.ndarray, t_out: np.ndarray, rtol: float, atol: float):
    def blowup(t, X):
        return DIVERGENCE - np.max(np.abs(X))

    blowup.terminal = True
    sol = solve_ivp(M.rhs_function(), (t_out[0], t_out[-1]), X0, method="RK45", t_eval=t_out, rtol=rtol, atol=atol,
                    events=blowup)
    if sol.status == -1:
        raise SolverError(sol.message)
    diverged = sol.status == 1
    return sol.y.T, diverged, {"method": "rk45", "rtol": rtol, "atol": atol, "nfev": int(sol.nfev)}


def simulate_closed_loop(plant, nominal: NominalModel, ctrl: DOBRealization | None, C: RationalFunction,
                         ref: Signal | None = None, dist=None, ic: InitialConditions | None = None,
                         horizon: float = DEFAULT_HORIZON, solver: str = "rk45", rtol: float = 1e-8,
                         atol: float = 1e-10, step: float | None = None,
                         samples: int = N_SAMPLES) -> SimulationTrace:
    """Simulate the real and nominal loops on a uniform grid of ``samples`` points.

    ``ctrl=None`` removes the DOB (``u = ubar``). For ``solver="rk4"`` the step
    defaults to ``tau/50`` and is capped at ``tau/20``.
    """
    nf = _as_normal_form(plant)
    if ctrl is not None and np.sign(nf.g) != np.sign(ctrl.nominal.g):
        raise ValueError("nominal high-frequency gain has the wrong sign")
    ref = ref if ref is not None else Zero()
    ic = ic or InitialConditions()
    M = _build(nf, nominal, ctrl, C, ref, dist)
    X0 = _initial_state(M, ic)
    d = _state_scale(M)
    Mi = _scaled(M, d)
    t_out = np.linspace(0.0, horizon, samples)
    tau = ctrl.tau if ctrl is not None else None
    if solver == "rk4":
        h_max = step if step is not None else (tau / 50 if tau else horizon / samples / 4)
        if tau is not None and h_max > tau / 20:
            log.info("RK4 step %.3g exceeds tau/20; using %.3g", h_max, tau / 20)
            h_max = tau / 20
        X, diverged, meta = _rk4(Mi, X0 / d, t_out, h_max)
    elif solver == "rk45":
        X, diverged, meta = _rk45(Mi, X0 / d, t_out, rtol, atol)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    X = X * d
    t = t_out[: X.shape[0]]
    if diverged:
        log.warning("trajectory diverged at t=%.4g", t[-1] if t.size else 0.0)
    return _trace(M, t, X, diverged, tau, meta)


def _trace(M: _Model, t: np.ndarray, X: np.ndarray, diverged: bool, tau, meta) -> SimulationTrace:
    s = M.slices
    nf, nom = M.nf, M.nominal
    r = np.array([M.ref(ti) for ti in t])
    u_raw = X @ M.ku + M.kr * r
    if M.ctrl is not None and M.ctrl.sat_level is not None:
        u = np.clip(u_raw, -M.ctrl.sat_level, M.ctrl.sat_level)
        active = np.abs(u_raw) > M.ctrl.sat_level
    else:
        u = u_raw
        active = np.zeros(t.size, dtype=bool)
    x, z = X[:, s["x"]], X[:, s["z"]]
    ubar = X @ M.cubar + M.kr * r
    d = np.array([float(nf.Kd @ M.dstack(ti)) for ti in t]) if M.dist else np.zeros(t.size)
    zD = X[:, s["zD"]]
    f_true = x @ nf.phi + z @ nf.psi
    f_nom = x @ nom.phi + zD @ nom.psi
    u_des = -d + (f_nom - f_true) / nf.g + nom.g / nf.g * ubar
    ubar_nom = X @ M.cubar_nom + M.kr_nom * r
    if M.ctrl is not None:
        w = X[:, s["w"]]
        zn, q = w[:, : nom.m], w[:, nom.m:]
        p = X[:, s["p"]]
    else:
        zn = q = p = np.zeros((t.size, 0))
    return SimulationTrace(t=t, y=x[:, 0].copy(), y_nominal=X[:, s["xN"].start].copy(), u=u, u_raw=u_raw,
                           u_desired=u_des, u_sat_active=active, x=x, z=z, p=p, q=q, zn=zn,
                           ubar_nominal=ubar_nom, diverged=diverged, tau=tau, meta=meta)


def recovery_metrics(trace: SimulationTrace, T_settle: float | None = None) -> RecoveryMetrics:
    """Deviation of the real output from the nominal one; ``T_settle`` defaults to ``20 tau``."""
    if T_settle is None:
        T_settle = 20.0 * trace.tau if trace.tau else 0.0
    if trace.diverged or trace.t.size == 0:
        inf = float("inf")
        return RecoveryMetrics(inf, inf, inf, inf, T_settle)
    if T_settle >= trace.t[-1]:
        raise ValueError("T_settle must be shorter than the horizon")
    dev = np.abs(trace.y - trace.y_nominal)
    post = trace.t >= T_settle
    tail = trace.t >= trace.t[0] + 0.9 * (trace.t[-1] - trace.t[0])
    return RecoveryMetrics(
        sup_dev=float(dev.max()),
        sup_dev_post=float(dev[post].max()),
        u_tracking=float(np.abs(trace.u - trace.u_desired)[post].max()),
        steady_state_err=float(dev[tail].mean()),
        T_settle=float(T_settle),
    )


def diagnostics(trace: SimulationTrace, ctrl: DOBRealization):
    """Observer and fast coordinates along a trace (``nu = mu = 2`` only)."""
    return observer_coordinates(ctrl, trace.q, trace.p, trace.y, trace.x[:, 1])


@dataclass(frozen=True)
class SweepResult:
    tau: float
    trace: SimulationTrace
    metrics: RecoveryMetrics


def _sweep_one(args) -> SweepResult:
    tau, plant, nominal, spec, C, kwargs, sat_level, T_factor = args
    ctrl = realize(nominal, spec.with_tau(tau), sat_level)
    tr = simulate_closed_loop(plant, nominal, ctrl, C, **kwargs)
    return SweepResult(tau, tr, recovery_metrics(tr, T_factor * tau))


def sweep(plant, nominal: NominalModel, spec: QFilterSpec, C: RationalFunction, taus: Sequence[float],
          sat_level: float | None = None, workers: int | None = None, T_settle_factor: float = 20.0,
          **kwargs) -> list[SweepResult]:
    """Simulate once per ``tau``; results are sorted by descending ``tau``.

    With ``workers > 1`` runs execute in separate processes and are gathered
    as they finish.
    """
    jobs = [(float(t), plant, nominal, spec, C, kwargs, sat_level, T_settle_factor) for t in taus]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(_sweep_one, j) for j in jobs]
            results = [f.result() for f in as_completed(futs)]
    else:
        results = [_sweep_one(j) for j in jobs]
    return sorted(results, key=lambda r: -r.tau)


def write_metrics_csv(results: Sequence[SweepResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "sup_dev", "sup_dev_post", "u_tracking", "steady_state_err"])
        for r in results:
            m = r.metrics
            w.writerow([repr(r.tau), repr(m.sup_dev), repr(m.sup_dev_post), repr(m.u_tracking),
                        repr(m.steady_state_err)])


@dataclass(frozen=True)
class PeakingRow:
    tau: float
    peak_unsat: float
    peak_sat: float
    sup_dev_unsat: float
    sup_dev_sat: float
    sat_level: float
    sat_active_after_settle: bool
    T_settle: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def peaking_probe(plant, nominal: NominalModel, spec: QFilterSpec, C: RationalFunction, sat_level: float,
                  ic: InitialConditions, taus: Sequence[float], T_settle_factor: float = 20.0,
                  **kwargs) -> list[PeakingRow]:
    """Compare the clamped and unclamped controllers under an initial-condition mismatch.

    Peaks of ``|u|`` are taken over ``[0, T_settle]``.
    """
    rows = []
    for tau in sorted(taus, reverse=True):
        unsat = realize(nominal, spec.with_tau(tau))
        sat = unsat.with_saturation(sat_level)
        T_settle = T_settle_factor * tau
        tr_u = simulate_closed_loop(plant, nominal, unsat, C, ic=ic, **kwargs)
        tr_s = simulate_closed_loop(plant, nominal, sat, C, ic=ic, **kwargs)
        early_u = tr_u.t <= T_settle
        early_s = tr_s.t <= T_settle
        rows.append(PeakingRow(
            tau=float(tau),
            peak_unsat=float(np.max(np.abs(tr_u.u_raw[early_u]))) if early_u.any() else float("nan"),
            peak_sat=float(np.max(np.abs(tr_s.u[early_s]))) if early_s.any() else float("nan"),
            sup_dev_unsat=recovery_metrics(tr_u, T_settle).sup_dev,
            sup_dev_sat=recovery_metrics(tr_s, T_settle).sup_dev,
            sat_level=float(sat_level),
            sat_active_after_settle=bool(np.any(tr_s.u_sat_active[tr_s.t > T_settle])),
            T_settle=T_settle,
        ))
    return rows
