"""Real-time dynamic spectrum management for multi-user multicarrier systems.

Primal solver built on a change of variables that keeps every iterate
feasible, plus the dual and exhaustive baselines and an experiment harness.
"""

from .baselines import IsbConfig, isb_run, oracle_search, waterfill
from .dov import DovTransform, apply, make_transform
from .ipdb import RunTrace, SolverConfig, run, stop_anytime_probe
from .model import Scenario, check_feasible, weighted_objective
from .scenarios import gen_named

__version__ = "0.1.0"

__all__ = [
    "DovTransform", "IsbConfig", "RunTrace", "Scenario", "SolverConfig",
    "apply", "check_feasible", "gen_named", "isb_run", "make_transform",
    "oracle_search", "run", "stop_anytime_probe", "waterfill", "weighted_objective",
]
