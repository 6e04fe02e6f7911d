"""Distributed AC optimal power flow: consensus ADMM over per-bus nonconvex
subproblems solved by sequential convex approximation."""

__version__ = "0.1.0"

from .admm import AdmmConfig, SolveReport, StopRule, run_admm  # noqa: E402
from .network import Network, build_admittance, load_case, local_problem, parse_case  # noqa: E402

__all__ = ["AdmmConfig", "SolveReport", "StopRule", "run_admm", "Network", "build_admittance",
           "load_case", "local_problem", "parse_case", "__version__"]
