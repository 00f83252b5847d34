import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dobkit.dob import realize
from dobkit.lti import nominal_model, to_normal_form
from dobkit.qfilter import QFilterSpec
from dobkit.scenarios import WORKED_A, WORKED_C, WORKED_NOMINAL, WORKED_PLANT, input_disturbance
from dobkit.sim import (
    Constant,
    InitialConditions,
    PolySignal,
    SimulationTrace,
    Sinusoid,
    Sum,
    Zero,
    peaking_probe,
    recovery_metrics,
    signal_from_dict,
    simulate_closed_loop,
    sweep,
    write_metrics_csv,
)

NOM = nominal_model(WORKED_NOMINAL)
PLANT = input_disturbance(WORKED_PLANT)
DIST = Sum((Constant(0.5), Sinusoid(0.3, 2.0)))
TAUS = (0.1, 0.05, 0.02, 0.01)


def _ctrl(tau, **kw):
    return realize(NOM, QFilterSpec.standard(tau, WORKED_A), **kw)


def _fake_trace(y, y_nom, t=None, tau=0.01, diverged=False):
    t = np.linspace(0, 1, len(y)) if t is None else t
    z = np.zeros((len(y), 0))
    return SimulationTrace(t=t, y=np.asarray(y, float), y_nominal=np.asarray(y_nom, float),
                           u=np.zeros(len(y)), u_raw=np.zeros(len(y)), u_desired=np.zeros(len(y)),
                           u_sat_active=np.zeros(len(y), bool), x=z, z=z, p=z, q=z, zn=z,
                           ubar_nominal=np.zeros(len(y)), diverged=diverged, tau=tau)


# -- signals -----------------------------------------------------------------

def test_sinusoid_derivatives():
    s = Sinusoid(2.0, 3.0, 0.4)
    t = 0.7
    d = s.derivs(t, 3)
    np.testing.assert_allclose(d, [2 * np.sin(3 * t + 0.4), 6 * np.cos(3 * t + 0.4),
                                   -18 * np.sin(3 * t + 0.4), -54 * np.cos(3 * t + 0.4)])


def test_polynomial_signal_derivatives():
    s = PolySignal((1.0, 2.0, 3.0))  # 1 + 2t + 3t^2
    np.testing.assert_allclose(s.derivs(2.0, 3), [17.0, 14.0, 6.0, 0.0])


def test_constant_and_zero():
    np.testing.assert_array_equal(Constant(4.0).derivs(1.0, 2), [4.0, 0.0, 0.0])
    np.testing.assert_array_equal(Zero().derivs(1.0, 1), [0.0, 0.0])


def test_signal_sum_and_dict():
    s = signal_from_dict([{"kind": "constant", "value": 1.0}, {"kind": "sinusoid", "amplitude": 2.0, "omega": 1.0}])
    assert s(0.5) == pytest.approx(1.0 + 2 * np.sin(0.5))
    assert isinstance(signal_from_dict(None), Zero)
    assert signal_from_dict(3.0)(10.0) == 3.0
    assert signal_from_dict({"kind": "polynomial-in-t", "coeffs": [0, 1]})(2.0) == 2.0
    with pytest.raises(ValueError):
        signal_from_dict({"kind": "noise"})


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 5), st.floats(0, 6), st.floats(0, 5))
def test_sinusoid_derivative_matches_finite_difference(amp, om, ph, t):
    s = Sinusoid(amp, om, ph)
    h = 1e-6
    d = s.derivs(t, 1)
    assert d[1] == pytest.approx((s(t + h) - s(t - h)) / (2 * h), abs=1e-6 * amp * om)


# -- simulation --------------------------------------------------------------

def test_nominal_equivalence():
    tr = simulate_closed_loop(NOM.nf, NOM, _ctrl(0.02), WORKED_C, ref=Constant(1.0), horizon=10.0)
    assert not tr.diverged
    assert np.max(np.abs(tr.y - tr.y_nominal)) < 10 * 1e-8


def test_trace_shapes_and_grid():
    tr = simulate_closed_loop(PLANT, NOM, _ctrl(0.05), WORKED_C, ref=Constant(1.0), horizon=2.0, samples=101)
    assert tr.t.size == 101 and tr.t[-1] == 2.0
    assert tr.x.shape == (101, 2) and tr.z.shape == (101, 1)
    assert tr.p.shape == (101, 2) and tr.q.shape == (101, 2) and tr.zn.shape == (101, 1)
    assert np.all(np.isfinite(tr.table()))
    assert tr.meta["method"] == "rk45"


def test_dob_beats_no_dob():
    kw = dict(ref=Constant(1.0), dist=Constant(0.5), horizon=10.0)
    with_dob = simulate_closed_loop(PLANT, NOM, _ctrl(0.01), WORKED_C, **kw)
    without = simulate_closed_loop(PLANT, NOM, None, WORKED_C, **kw)
    a = recovery_metrics(with_dob).sup_dev
    b = recovery_metrics(without, 0.2).sup_dev
    assert math.isfinite(a)
    assert a < b
    assert a == pytest.approx(0.0210334739994138, rel=1e-5)
    assert b == pytest.approx(0.6895741088592624, rel=1e-5)


def test_wrong_gain_sign_rejected():
    from dobkit.poly import RationalFunction
    neg = input_disturbance(RationalFunction([-1.2, -1.5], [0.5, 3.0, 1.5, 1.0]))
    with pytest.raises(ValueError):
        simulate_closed_loop(neg, NOM, _ctrl(0.05), WORKED_C, horizon=1.0)


def test_unknown_solver():
    with pytest.raises(ValueError):
        simulate_closed_loop(PLANT, NOM, _ctrl(0.05), WORKED_C, horizon=1.0, solver="euler")


def test_rk4_step_capped():
    tr = simulate_closed_loop(PLANT, NOM, _ctrl(0.05), WORKED_C, horizon=1.0, solver="rk4", step=0.01)
    assert tr.meta["step"] <= 0.05 / 20


@pytest.mark.parametrize("tau", [0.1, 0.05, 0.02])
def test_rk4_rk45_agree(tau):
    kw = dict(ref=Constant(1.0), dist=DIST, horizon=10.0)
    a = simulate_closed_loop(PLANT, NOM, _ctrl(tau), WORKED_C, **kw)
    b = simulate_closed_loop(PLANT, NOM, _ctrl(tau), WORKED_C, solver="rk4", **kw)
    assert np.max(np.abs(a.y - b.y)) < 1e-5


def test_divergence_truncates():
    from dobkit.poly import RationalFunction
    # zero at +1: the loop is unstable for small tau
    bad = input_disturbance(RationalFunction([-1.2, 1.2], [0.5, 3.0, 1.5, 1.0]))
    tr = simulate_closed_loop(bad, NOM, _ctrl(0.01), WORKED_C, ref=Constant(1.0), horizon=60.0,
                              rtol=1e-6, atol=1e-8)
    assert tr.diverged
    assert tr.t[-1] < 60.0
    assert all(math.isinf(v) for v in (recovery_metrics(tr).sup_dev, recovery_metrics(tr).u_tracking))


# -- metrics -----------------------------------------------------------------

def test_metrics_identical_traces():
    y = np.sin(np.linspace(0, 3, 50))
    m = recovery_metrics(_fake_trace(y, y))
    assert m.sup_dev == m.sup_dev_post == m.steady_state_err == 0.0


def test_metrics_constant_offset():
    y = np.sin(np.linspace(0, 3, 50))
    m = recovery_metrics(_fake_trace(y + 0.25, y))
    assert m.sup_dev == pytest.approx(0.25)
    assert m.steady_state_err == pytest.approx(0.25)


def test_metrics_settle_window():
    y_nom = np.zeros(101)
    y = np.zeros(101)
    y[5] = 1.0  # t = 0.05, before the default T_settle of 20 tau = 0.2
    m = recovery_metrics(_fake_trace(y, y_nom))
    assert m.sup_dev == 1.0
    assert m.sup_dev_post == 0.0
    assert m.T_settle == pytest.approx(0.2)


def test_metrics_settle_beyond_horizon():
    with pytest.raises(ValueError):
        recovery_metrics(_fake_trace(np.zeros(5), np.zeros(5)), T_settle=2.0)


def test_metrics_nonnegative():
    tr = simulate_closed_loop(PLANT, NOM, _ctrl(0.05), WORKED_C, ref=Constant(1.0), dist=DIST, horizon=5.0)
    assert all(v >= 0 for v in recovery_metrics(tr).to_dict().values())


# -- sweep -------------------------------------------------------------------

@pytest.fixture(scope="module")
def worked_sweep():
    return sweep(PLANT, NOM, QFilterSpec.standard(0.1, WORKED_A), WORKED_C, TAUS,
                 ref=Constant(1.0), dist=DIST, horizon=10.0)


def test_sweep_monotone(worked_sweep):
    assert [r.tau for r in worked_sweep] == list(TAUS)
    post = [r.metrics.sup_dev_post for r in worked_sweep]
    ut = [r.metrics.u_tracking for r in worked_sweep]
    assert all(a > b for a, b in zip(post, post[1:]))
    assert all(a > b for a, b in zip(ut, ut[1:]))


GOLDEN = {
    0.1: (0.19803218384742227, 0.15591637774483563, 0.02998770901965711),
    0.05: (0.1140232390573277, 0.09302322310634958, 0.021466528073022042),
    0.02: (0.050282098177484746, 0.03894526679999866, 0.010927854184460637),
    0.01: (0.025994437838297246, 0.01988961995322408, 0.005949599808477819),
}


def test_sweep_golden(worked_sweep):
    for r in worked_sweep:
        sup_post, ut, sse = GOLDEN[r.tau]
        assert r.metrics.sup_dev_post == pytest.approx(sup_post, rel=1e-5)
        assert r.metrics.u_tracking == pytest.approx(ut, rel=1e-5)
        assert r.metrics.steady_state_err == pytest.approx(sse, rel=1e-5)


def test_sweep_parallel_matches_serial(worked_sweep):
    par = sweep(PLANT, NOM, QFilterSpec.standard(0.1, WORKED_A), WORKED_C, TAUS, workers=2,
                ref=Constant(1.0), dist=DIST, horizon=10.0)
    assert [r.tau for r in par] == list(TAUS)
    for a, b in zip(par, worked_sweep):
        assert np.array_equal(a.trace.y, b.trace.y)
        assert a.metrics == b.metrics


def test_trace_csv_columns(tmp_path, worked_sweep):
    tr = worked_sweep[0].trace
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "y", "y_nominal", "u", "u_desired", "u_sat_active",
                       "x1", "x2", "z1", "p1", "p2", "q1", "q2", "zn1"]
    assert len(rows) == tr.t.size + 1


def test_metrics_csv(tmp_path, worked_sweep):
    path = tmp_path / "metrics.csv"
    write_metrics_csv(worked_sweep, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau", "sup_dev", "sup_dev_post", "u_tracking", "steady_state_err"]
    assert [float(r[0]) for r in rows[1:]] == list(TAUS)


# -- peaking -----------------------------------------------------------------

def test_peaking_zero_mismatch():
    rows = peaking_probe(PLANT, NOM, QFilterSpec.standard(1.0, WORKED_A), WORKED_C, 5.0,
                         InitialConditions(), [1e-2], ref=Constant(1.0), horizon=2.0)
    r = rows[0]
    assert r.peak_unsat == pytest.approx(r.peak_sat)
    assert r.sup_dev_unsat == pytest.approx(r.sup_dev_sat)
    assert r.peak_unsat < r.sat_level


def test_peaking_with_mismatch():
    rows = peaking_probe(PLANT, NOM, QFilterSpec.standard(1.0, WORKED_A), WORKED_C, 5.0,
                         InitialConditions(x=[1.0, 0.5]), [1e-2, 3e-3, 1e-3], ref=Constant(1.0),
                         horizon=2.0, rtol=1e-6, atol=1e-8)
    peaks = [r.peak_unsat for r in rows]
    assert peaks[0] < peaks[1] < peaks[2]
    # the unclamped peak is the initial feedthrough a0 y(0) / (g_n tau^2)
    assert rows[-1].peak_unsat / rows[-1].sat_level == pytest.approx(4.0e5, rel=1e-9)
    for r in rows:
        assert r.peak_sat <= r.sat_level
        assert not r.sat_active_after_settle
    sats = [r.sup_dev_sat for r in rows]
    assert max(sats) < 0.2
    assert sats[0] > sats[1] > sats[2]
