"""Structure-preserving particle-in-cell solver for a hybrid plasma model.

Kinetic ions (markers) couple to mass-less quasi-neutral fluid electrons
through a skew bracket discretized on a periodic B-spline de Rham complex
over mapped domains.  Energy, weak magnetic divergence, and density
positivity are conserved by construction; see the README for the
experiment harness.
"""

__version__ = "0.1.0"

from .feec import DeRhamComplex, SplineGrid
from .geometry import Mapping
from .integrators import HybridIntegrator, IntegratorConfig, SimulationState
from .particles import CoefficientFilter, ParticleEnsemble, ShapeFunction, sample_maxwellian
from .projectors import CommutingProjectors

__all__ = [
    "__version__",
    "DeRhamComplex",
    "SplineGrid",
    "Mapping",
    "HybridIntegrator",
    "IntegratorConfig",
    "SimulationState",
    "CoefficientFilter",
    "ParticleEnsemble",
    "ShapeFunction",
    "sample_maxwellian",
    "CommutingProjectors",
]
