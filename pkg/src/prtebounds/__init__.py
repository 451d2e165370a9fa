"""Sharp bounds on policy-relevant treatment effects with an instrument.

The treated and untreated outcome laws among units moved by a policy are
only partly identified; the bounds come from coupling identified complier
laws with the policy weight through one-dimensional optimal transport.
"""
from .baseline import MtrSieve, mr_bounds_from_data, solve_mr_bounds
from .continuous import ContConfig, continuous_estimate
from .data import Dataset, load_csv, write_csv
from .dml import DmlConfig, dml_estimate
from .errors import (BoundsError, InfeasibleError, InsufficientDataError,
                     ValidationError)
from .measures import EmpiricalMeasure, SubDistribution, cvar, quantile
from .ot1d import CouplingMode, ot_bruteforce, ot_product_extreme
from .plugin import closed_form_from_data
from .roy import (BoundPair, bound_component, discrete_gap_data, identified_bounds,
                  make_layout)
from .weights import PolicySpec, StepWeight, prte_weight

__version__ = "0.1.0"
