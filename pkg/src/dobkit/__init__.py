"""Disturbance-observer design, robust-stability analysis and simulation for SISO LTI plants."""

from .dob import DOBRealization, realize
from .lti import NominalModel, NormalForm, StateSpacePlant, nominal_model, tf_to_statespace, to_normal_form
from .poly import Polynomial, RationalFunction, is_hurwitz, routh_stable
from .qfilter import GainInterval, QFilterSpec, design_coefficients, verify_condition_C
from .sim import recovery_metrics, simulate_closed_loop, sweep
from .stability import LoopFactors, Verdict, characteristic_polynomial, root_grouping

__version__ = "0.1.0"

__all__ = [
    "DOBRealization", "GainInterval", "LoopFactors", "NominalModel", "NormalForm", "Polynomial",
    "QFilterSpec", "RationalFunction", "StateSpacePlant", "Verdict", "characteristic_polynomial",
    "design_coefficients", "is_hurwitz", "nominal_model", "realize", "recovery_metrics", "root_grouping",
    "routh_stable", "simulate_closed_loop", "sweep", "tf_to_statespace", "to_normal_form",
    "verify_condition_C",
]
