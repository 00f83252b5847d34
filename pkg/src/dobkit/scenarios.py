"""Reference plants and random plant generators used by tests, the CLI and the examples."""

from __future__ import annotations

import numpy as np

from .lti import StateSpacePlant, tf_to_statespace
from .poly import Polynomial, RationalFunction

# third-order, relative-degree-two running example
WORKED_NOMINAL = RationalFunction([2.0, 1.0], [1.0, 2.0, 3.0, 1.0])
# every coefficient moved by 40-50%
WORKED_PLANT = RationalFunction([1.2, 1.5], [0.5, 3.0, 1.5, 1.0])
WORKED_C = RationalFunction([1.0, 2.0], [0.0, 1.0])
WORKED_A = (2.0, 3.0)

# relative degree three; rho(s) = s^2 + 2 s + 2 caps a_0 g/g_n below 4
NU3_NOMINAL = RationalFunction([1.0], [1.0, 3.0, 3.0, 1.0])
NU3_PLANT = RationalFunction([3.0], [1.5, 2.0, 4.0, 1.0])
NU3_C = RationalFunction([0.5, 1.0], [0.0, 1.0])
NU3_RHO = Polynomial([2.0, 2.0, 1.0])


def input_disturbance(P: RationalFunction) -> StateSpacePlant:
    """Controllable realization with the disturbance entering at the input (``E = b``)."""
    plant = tf_to_statespace(P)
    return plant.with_disturbance(plant.b.reshape(-1, 1))


def worked_family(rng: np.random.Generator, count: int, spread: float = 0.5,
                  nominal: RationalFunction = WORKED_NOMINAL) -> list[RationalFunction]:
    """Perturb each coefficient of ``nominal`` by a factor drawn uniformly from ``1 +- spread``.

    The leading denominator coefficient stays 1. With ``spread < 1`` every
    coefficient keeps its sign, so the family remains minimum phase whenever
    the nominal numerator has positive coefficients of degree at most two.
    """
    if not 0 <= spread < 1:
        raise ValueError("spread must lie in [0, 1)")
    num, den = nominal.num.coeffs, nominal.den.coeffs / nominal.den.lead
    out = []
    for _ in range(count):
        fn = 1 + rng.uniform(-spread, spread, num.size)
        fd = 1 + rng.uniform(-spread, spread, den.size)
        fd[-1] = 1.0
        out.append(RationalFunction(num * fn, den * fd))
    return out


def _random_roots(rng: np.random.Generator, k: int, lo: float, hi: float) -> np.ndarray:
    roots = []
    while len(roots) < k:
        if k - len(roots) >= 2 and rng.random() < 0.4:
            re, im = rng.uniform(lo, hi), rng.uniform(0.2, 2.0)
            roots += [complex(re, im), complex(re, -im)]
        else:
            roots.append(complex(rng.uniform(lo, hi), 0.0))
    return np.array(roots)


def random_plant(rng: np.random.Generator, n: int, nu: int, gain_range=(0.5, 3.0),
                 min_sep: float = 0.05) -> RationalFunction:
    """Random coprime ``N/D`` with ``deg D = n`` and relative degree ``nu``.

    Poles and zeros are drawn in ``[-3, 1]`` (zeros may be unstable), kept
    ``min_sep`` apart so the pair is comfortably coprime.
    """
    if not 1 <= nu <= n:
        raise ValueError("need 1 <= nu <= n")
    m = n - nu
    while True:
        p = _random_roots(rng, n, -3.0, 1.0)
        z = _random_roots(rng, m, -3.0, 1.0)
        if m and np.min(np.abs(p[:, None] - z[None, :])) < min_sep:
            continue
        g = rng.uniform(*gain_range) * rng.choice([-1.0, 1.0])
        return RationalFunction(Polynomial.from_roots(z) * g, Polynomial.from_roots(p))
