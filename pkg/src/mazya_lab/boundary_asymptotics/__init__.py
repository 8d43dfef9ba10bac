"""Boundary-profile averages and the bent test-function expansion."""

from .profile import (BoundaryProfile, HypothesisReport, PhiEstimate, ProfileAverages,
                      ProfileKind, QuadratureError, RVFCheck, SlowlyVarying, average_f,
                      average_f1, average_f2, divergence_verdict, fubini_f, hypothesis_report,
                      phi_beta, profile_averages, rvf_ratio_check, sphere_moment, sphere_rule)
from .asymptotics import (A2Result, AsymptoticsReport, BoundaryGradient, DirectQuotient,
                          GridSupportError, assemble_quotient, attainability, chi, compute_A1,
                          compute_A2, cutoff, direct_bent_quotient, f_log_integral,
                          far_field_radius, jacobian_determinant, straightening_map, variation)

__all__ = [
    "BoundaryProfile", "HypothesisReport", "PhiEstimate", "ProfileAverages", "ProfileKind",
    "QuadratureError", "RVFCheck", "SlowlyVarying", "average_f", "average_f1", "average_f2",
    "divergence_verdict", "fubini_f", "hypothesis_report", "phi_beta", "profile_averages",
    "rvf_ratio_check", "sphere_moment", "sphere_rule",
    "A2Result", "AsymptoticsReport", "BoundaryGradient", "DirectQuotient", "GridSupportError",
    "assemble_quotient", "attainability", "chi", "compute_A1", "compute_A2", "cutoff",
    "direct_bent_quotient", "f_log_integral", "far_field_radius", "jacobian_determinant",
    "straightening_map", "variation",
]
