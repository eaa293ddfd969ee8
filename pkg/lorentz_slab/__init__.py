"""
lorentz_slab - Lorentz gas transport in a slab between two reservoirs

Microscopic hard-disk dynamics, the linear Boltzmann jump process and the
diffusive references they converge to, with experiments that check the
stationary linear profile, Fick's law and the scaling of memory effects.
"""

__version__ = "0.1.0"

from .angular import AngularFunction, green_kubo_d, l_inverse, stationary_remainder
from .config import ConfigError, SlabConfig
from .diagnostics import classify_pathologies, compare_fields, scaling_fit
from .estimators import BoundedDatum, Estimate
from .geometry import ParticleState, ScattererField, build_field, first_hit
from .heat import heat_evolve_free, slab_survival
from .kinetic import apply_S0, estimate_h_out, estimate_h_stationary, survival_probability
from .micro import estimate_f, estimate_f_stationary, flow_backward

__all__ = [
    "AngularFunction",
    "BoundedDatum",
    "ConfigError",
    "Estimate",
    "ParticleState",
    "ScattererField",
    "SlabConfig",
    "apply_S0",
    "build_field",
    "classify_pathologies",
    "compare_fields",
    "estimate_f",
    "estimate_f_stationary",
    "estimate_h_out",
    "estimate_h_stationary",
    "first_hit",
    "flow_backward",
    "green_kubo_d",
    "heat_evolve_free",
    "l_inverse",
    "scaling_fit",
    "slab_survival",
    "stationary_remainder",
    "survival_probability",
]
