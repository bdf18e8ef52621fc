"""Worst-case (sublinear) expectations, hedging and decompositions under volatility uncertainty.

Typical use::

    from volunc import g_set, make_claim, dp_value, LatticeConfig
    lat = dp_value(make_claim({"name": "square"}), g_set(1.0, 4.0), LatticeConfig(N=200))
    lat.root  # 4.0
"""
from ._accel import backend
from .claims import BUNDLED_CLAIMS, Claim, make_claim
from .decompose import (Decomposition, build_decomposition, check_symmetry, extract_decomposition,
                        verify_2bsde)
from .dp import (LatticeConfig, ValueLattice, argmax_control, check_supermartingale, check_time_consistency,
                 dp_multitime, dp_value, mc_lower_bound, value_at_stopping_time)
from .errors import ArgumentError, ConfigurationError, DomainError, ResourceError, VolUncError
from .gpde import GFunction, PDEGrid, ValueSurface, extract_delta, solve_g_pde, solve_multitime
from .hedge import classify_replicable, conservative_price, superhedge_verify
from .paths import (DiscretePath, PathBundle, TimeGrid, pathwise_integral, quadratic_covariation, simulate)
from .scenarios import (PasteSpec, ScenarioSet, VolControl, constant, contains, g_set, max_chosen_check,
                        paste, threshold_switch, time_switch, upward_select)

__version__ = "0.1.0"
