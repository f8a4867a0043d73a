"""Optimal-path chaos diagnostics for a continuously monitored qubit.

The package covers: the kicked two-measurement stochastic Hamiltonian and
its analytic utilities (`model`), scalar and batch integration of the
optimal-path equations (`integrator`, `batch`), Lyapunov exponents and
stroboscopic portraits (`chaos`), adaptive manifold refinement with fold
and multipath analysis (`manifold`), Monte-Carlo stochastic trajectories
with post-selection (`sqt`), the analytic projective-kick model
(`kicklimit`), and a batch CLI (`cli`).
"""

__version__ = "0.1.0"

from .integrator import FlowResult, IntegratorConfig, OpPath, PathStatus
from .model import MeasurementSchedule, PhasePoint, Readouts

__all__ = [
    "FlowResult",
    "IntegratorConfig",
    "MeasurementSchedule",
    "OpPath",
    "PathStatus",
    "PhasePoint",
    "Readouts",
    "__version__",
]
