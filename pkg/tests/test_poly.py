import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from _util import multiset_distance
from dobkit.poly import (
    DegenerateInputError,
    IndeterminateRouthError,
    Polynomial,
    RationalFunction,
    coeff_rel_error,
    is_hurwitz,
    poly_add,
    poly_compose_scaled,
    poly_mul,
    roots,
    routh_stable,
)


def _sorted(r):
    r = np.asarray(r, dtype=complex)
    return r[np.lexsort((r.imag, r.real))]


def test_trailing_zeros_stripped():
    p = Polynomial([1.0, 2.0, 0.0, 0.0])
    assert p.degree == 1
    assert np.array_equal(p.coeffs, [1.0, 2.0])


def test_zero_polynomial_flagged():
    z = Polynomial([0.0, 0.0])
    assert z.is_zero
    assert z.degree == 0


def test_roots_difference_of_squares():
    np.testing.assert_allclose(_sorted(roots(Polynomial([-1, 0, 1]))), [-1, 1], atol=1e-12)


def test_roots_perfect_square():
    np.testing.assert_allclose(roots(Polynomial([1, 2, 1])), [-1, -1], atol=1e-7)


def test_roots_cubic_reconstruction():
    p = Polynomial([1, 2, 3, 1])
    r = roots(p)
    assert r.size == 3
    back = Polynomial.from_roots(r, lead=p.lead)
    assert coeff_rel_error(back, p) < 1e-8


def test_roots_of_zero_polynomial_raise():
    with pytest.raises(DegenerateInputError):
        roots(Polynomial([0.0]))


def test_roots_of_constant_empty():
    assert roots(Polynomial([3.0])).size == 0


def test_roots_with_zero_roots():
    np.testing.assert_allclose(_sorted(roots(Polynomial([0, 0, 2, 1]))), [-2, 0, 0], atol=1e-12)


def test_hurwitz_double_root_margin():
    res = is_hurwitz(Polynomial([1, 2, 1]))
    assert res.stable
    assert res.margin == pytest.approx(1.0, abs=1e-7)


def test_hurwitz_unstable_quadratic():
    assert not is_hurwitz(Polynomial([-1, 0, 1])).stable


@pytest.mark.parametrize("k, expected", [(3.9, True), (4.1, False)])
def test_hurwitz_cubic_boundary(k, expected):
    # s^3 + 2 s^2 + 2 s + k: stable iff 2*2 > k
    assert is_hurwitz(Polynomial([k, 2, 2, 1])).stable is expected
    assert routh_stable(Polynomial([k, 2, 2, 1])) is expected


def test_hurwitz_negative_leading_coefficient():
    assert is_hurwitz(Polynomial([-1, -2, -1])).stable


def test_hurwitz_zero_polynomial_raises():
    with pytest.raises(DegenerateInputError):
        is_hurwitz(Polynomial([0.0]))


def test_routh_indeterminate_row():
    # (s^2 + 1)(s^2 + s + 1) has a vanishing Routh row
    p = Polynomial([1, 1, 2, 1, 1])
    with pytest.raises(IndeterminateRouthError):
        routh_stable(p)
    res = is_hurwitz(p)
    assert not res.stable
    assert res.method == "roots"


def test_compose_scaled_substitution():
    tau = 0.3
    p = Polynomial([2.0, 3.0, 1.0])
    np.testing.assert_allclose(poly_compose_scaled(p, tau).coeffs, [2.0, 3.0 * tau, tau**2])


def test_compose_scaled_identity():
    p = Polynomial([2.0, 3.0, 1.0])
    assert p.compose_scaled(1.0) == p


def test_product_of_linear_factors():
    assert poly_mul(Polynomial([1, 1]), Polynomial([2, 1])) == Polynomial([2, 3, 1])


def test_add_cancels_leading_terms():
    p = poly_add(Polynomial([1, 2, 1]), Polynomial([0, 0, -1]))
    assert p.degree == 1


def test_compose_scaled_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        Polynomial([1, 1]).compose_scaled(0.0)


def test_rational_relative_degree_and_gains():
    P = RationalFunction([2, 1], [1, 2, 3, 1])
    assert P.relative_degree == 2
    assert P.is_strictly_proper
    assert P.high_frequency_gain == 1.0
    assert P.dc_gain() == 2.0


def test_rational_zero_denominator_rejected():
    with pytest.raises(DegenerateInputError):
        RationalFunction([1.0], [0.0])


def test_rational_cancel_common_factor():
    P = RationalFunction(Polynomial([1, 1]), Polynomial([1, 1]) * Polynomial([2, 1]))
    assert not P.is_coprime()
    Q = P.cancel()
    assert Q.is_coprime()
    assert Q.allclose(RationalFunction([1.0], [2.0, 1.0]))


def test_rational_cancel_complex_pair():
    f = Polynomial([2, 2, 1])  # roots -1 +- i
    P = RationalFunction(f * Polynomial([3, 1]), f * Polynomial([1, 2, 1]) * Polynomial([5, 1]))
    Q = P.cancel()
    assert Q.den.degree == 3
    assert Q.allclose(RationalFunction(Polynomial([3, 1]), Polynomial([1, 2, 1]) * Polynomial([5, 1])))


# -- properties --------------------------------------------------------------

_root = st.builds(complex, st.floats(-10, 10), st.floats(-10, 10))


@settings(max_examples=60, deadline=None)
@given(st.lists(_root, min_size=1, max_size=5))
def test_roots_round_trip(half):
    # conjugate-closed root sets give real coefficients; degree <= 10
    r = []
    for z in half:
        if abs(z.imag) < 0.5:
            r.append(complex(z.real, 0.0))
        else:
            r += [z, z.conjugate()]
    r = np.array(r)
    d = np.abs(r[:, None] - r[None, :]) + np.eye(r.size) * 1e9
    assume(d.min() > 0.5)
    got = roots(Polynomial.from_roots(r))
    assert got.size == r.size
    assert multiset_distance(got, r) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_routh_agrees_with_root_real_parts(deg, seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 3, deg + 1)
    c[-1] = abs(c[-1]) + 0.1
    p = Polynomial(c)
    maxre = np.max(np.roots(p.descending()).real)  # independent oracle
    assume(abs(maxre) > 1e-6)
    assert is_hurwitz(p).stable == (maxre < 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(1e-3, 1e3))
def test_compose_scaled_inverse(c, tau):
    p = Polynomial(c)
    assume(not p.is_zero)
    back = p.compose_scaled(tau).compose_scaled(1.0 / tau)
    assert coeff_rel_error(back, p) < 1e-12
