"""maslab: nonlocal extremal operators in Monge-Ampere section geometry.

A numerical laboratory for integro-differential operators whose kernels
deform like sections of a convex potential: section geometry and covers,
singular quadrature for the extremal/Isaacs operators, a monotone Dirichlet
solver with a Monte Carlo oracle, the concave-envelope ABP pipeline, and
Harnack / Hoelder / tail-estimate experiments.
"""

from .grid import AnalyticField, ExteriorRule, GridFunction
from .kernels import KernelRule, KernelSpec, QuadraturePlan, make_plan
from .potential import Potential, make_potential
from .sections import AffineMap, CoverReport, Section
from .solver import DiscreteProblem, SolveReport, solve

__version__ = "0.1.0"

__all__ = [
    "AffineMap", "AnalyticField", "CoverReport", "DiscreteProblem",
    "ExteriorRule", "GridFunction", "KernelRule", "KernelSpec", "Potential",
    "QuadraturePlan", "Section", "SolveReport", "make_plan", "make_potential",
    "solve", "__version__",
]
