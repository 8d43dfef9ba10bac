"""Exponent bookkeeping: the tuple (m, n, p, sigma), the critical exponent and
the admissibility classification of (p, sigma) for a given domain kind."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class DomainKind(str, enum.Enum):
    WHOLE_SPACE = "wholeSpace"
    COMPLEMENT_OF_P = "complementOfP"
    COMPLEMENT_OF_RAY_WEDGE = "complementOfRayWedge"


class Case(str, enum.Enum):
    A = "a"
    B = "b"
    C = "c"
    INADMISSIBLE = "inadmissible"


def sphere_area(k: int) -> float:
    """Area of the unit sphere S^k in R^{k+1}; S^0 = {-1, 1} has area 2."""
    if k < 0:
        raise ValueError("sphere dimension must be >= 0")
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def critical_exponent(n, p, sigma) -> float:
    """q = n p / (n - sigma p)."""
    if sigma * p >= n:
        raise ValueError(f"sigma*p = {sigma * p} must be < n = {n}")
    if sigma == 0:
        return float(p)
    return n * p / (n - sigma * p)


@dataclass(frozen=True)
class ProblemParams:
    m: int
    n: int
    p: float
    sigma: float

    def __post_init__(self):
        m, n, p, s = self.m, self.n, self.p, self.sigma
        if int(m) != m or int(n) != n:
            raise ValueError("m and n must be integers")
        if n < 3:
            raise ValueError("n must be >= 3")
        if not 2 <= m <= n - 1:
            raise ValueError("need 2 <= m <= n-1")
        if not p > 1:
            raise ValueError("need p > 1")
        # sigma = 1 (the classical Sobolev endpoint) is allowed
        if not 0.0 <= s <= 1.0:
            raise ValueError("need 0 <= sigma <= 1")
        if s * p >= n:
            raise ValueError("need sigma*p < n")

    @property
    def q(self) -> float:
        return critical_exponent(self.n, self.p, self.sigma)

    @property
    def weight_power(self) -> float:
        """Exponent a in |y|^{-a} of the q-norm weight, a = (1 - sigma) q."""
        return (1.0 - self.sigma) * self.q

    def s_star(self) -> float:
        """Lower edge n(p-m)/(p(n-m)) of the region where case (a) holds."""
        return self.n * (self.p - self.m) / (self.p * (self.n - self.m))


def admissibility_case(params: ProblemParams, domain_kind) -> Case:
    dk = DomainKind(domain_kind)
    m, n, p, s = params.m, params.n, params.p, params.sigma
    if params.s_star() < s <= 1.0:
        return Case.A
    in_cp = dk in (DomainKind.COMPLEMENT_OF_P, DomainKind.COMPLEMENT_OF_RAY_WEDGE)
    if in_cp and p > m and s <= min(params.s_star(), n / p) and s != 1.0:
        return Case.B
    if dk is DomainKind.COMPLEMENT_OF_RAY_WEDGE and p == m and s == 0.0:
        return Case.C
    return Case.INADMISSIBLE
