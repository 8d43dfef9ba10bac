from .params import (Case, DomainKind, ProblemParams, admissibility_case,
                     critical_exponent, sphere_area)
from .grid import Axis, AxiGrid, GridFunction, boundary_mask, graded_nodes
from .functionals import (dirichlet_energy, energy_and_gradient, norm_weights,
                          rayleigh_quotient, weighted_norm)

__all__ = [
    "Case", "DomainKind", "ProblemParams", "admissibility_case", "critical_exponent",
    "sphere_area", "Axis", "AxiGrid", "GridFunction", "boundary_mask", "graded_nodes",
    "dirichlet_energy", "energy_and_gradient", "norm_weights", "rayleigh_quotient",
    "weighted_norm",
]
