"""Boundary parameterization, phase classification and limiting densities.

The open ASEP with jump rates ``(q, alpha, beta, gamma, delta)`` is
re-parameterized by ``(A, B, C, D, q)`` through the two roots of a quadratic
(``phi_pm``).  Everything asymptotic about the stationary measure (phase,
boundary densities, bulk densities, location split of a light particle)
is a closed-form function of ``(A, B, C, D)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ParameterError, WrongPhaseError

TIE_TOL = 1e-12


@dataclass(frozen=True)
class RateParams:
    q: float
    alpha: float
    beta: float
    gamma: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ParameterError(f"q must lie in [0, 1), got {self.q}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ParameterError("alpha and beta must be positive")
        if not (self.gamma >= 0 and self.delta >= 0):
            raise ParameterError("gamma and delta must be nonnegative")

    def swapped(self) -> "RateParams":
        """Particle-hole reflected rates (alpha<->beta, gamma<->delta)."""
        return RateParams(self.q, self.beta, self.alpha, self.delta, self.gamma)


@dataclass(frozen=True)
class BoundaryParams:
    A: float
    B: float
    C: float
    D: float
    q: float

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ParameterError(f"q must lie in [0, 1), got {self.q}")
        if self.A < 0 or self.C < 0:
            raise ParameterError("A and C must be nonnegative")
        if not (-1.0 < self.B <= 0.0 and -1.0 < self.D <= 0.0):
            raise ParameterError("B and D must lie in (-1, 0]")


class Phase(str, enum.Enum):
    MAX_CURRENT = "MaxCurrent"
    HIGH_DENSITY = "HighDensity"
    LOW_DENSITY = "LowDensity"
    COEXISTENCE = "Coexistence"
    TRIPLE_POINT = "TriplePoint"


class Region(str, enum.Enum):
    FAN = "Fan"
    SHOCK = "Shock"
    BOUNDARY = "Boundary"  # AC == 1


@dataclass(frozen=True)
class PhaseLabel:
    phase: Phase
    region: Region


@dataclass(frozen=True)
class LimitingDensities:
    sigma_left: float
    sigma_right: float
    rho_left: float
    rho_right: float
    # None on the coexistence line, where the bulk is the linear profile
    bulk: float | None


def phi_pm(x: float, y: float, q: float, sign: int) -> float:
    """Root of ``x z^2 - (1-q-x+y) z - y = 0`` picked by ``sign`` (+1 or -1)."""
    if not (x > 0 and y >= 0 and 0 <= q < 1):
        raise ParameterError(f"phi_pm needs x>0, y>=0, 0<=q<1 (got x={x}, y={y}, q={q})")
    if sign not in (1, -1):
        raise ParameterError("sign must be +1 or -1")
    b = 1.0 - q - x + y
    disc = math.sqrt(b * b + 4.0 * x * y)
    # pick the cancellation-free form for each root
    if sign > 0:
        if b >= 0:
            return (b + disc) / (2.0 * x)
        return 2.0 * y / (disc - b) if y > 0 else 0.0
    if b <= 0:
        return (b - disc) / (2.0 * x)
    return -2.0 * y / (b + disc) if y > 0 else 0.0


def rates_to_boundary(r: RateParams) -> BoundaryParams:
    return BoundaryParams(
        A=phi_pm(r.beta, r.delta, r.q, +1),
        B=phi_pm(r.beta, r.delta, r.q, -1),
        C=phi_pm(r.alpha, r.gamma, r.q, +1),
        D=phi_pm(r.alpha, r.gamma, r.q, -1),
        q=r.q,
    )


def boundary_to_rates(b: BoundaryParams) -> RateParams:
    """Inverse of :func:`rates_to_boundary`.

    ``phi_pm(x, y)`` are the roots of ``x z^2 - (1-q-x+y) z - y``, so by
    Vieta ``x = (1-q)/((1+P)(1+M))`` and ``y = -x P M`` for roots ``P, M``.
    """
    s = 1.0 - b.q
    alpha = s / ((1.0 + b.C) * (1.0 + b.D))
    beta = s / ((1.0 + b.A) * (1.0 + b.B))
    gamma = -alpha * b.C * b.D
    delta = -beta * b.A * b.B
    # clip rounding noise, and avoid returning -0.0
    return RateParams(b.q, alpha, beta, gamma if gamma > 0 else 0.0, delta if delta > 0 else 0.0)


def classify(b: BoundaryParams, tol: float = TIE_TOL) -> PhaseLabel:
    """Phase and fan/shock region of ``b``; exact ties are reported, not broken.

    The segment ``A == 1, C < 1`` (and its mirror) is reported as MaxCurrent,
    where the bulk and boundary density formulas of that phase still hold.
    """
    A, C = b.A, b.C
    a1 = abs(A - 1.0) <= tol
    c1 = abs(C - 1.0) <= tol
    if a1 and c1:
        phase = Phase.TRIPLE_POINT
    elif A <= 1.0 + tol and C <= 1.0 + tol:
        phase = Phase.MAX_CURRENT
    elif abs(A - C) <= tol:
        phase = Phase.COEXISTENCE
    elif A > C:
        phase = Phase.HIGH_DENSITY
    else:
        phase = Phase.LOW_DENSITY
    ac = A * C
    if abs(ac - 1.0) <= tol:
        region = Region.BOUNDARY
    elif ac < 1.0:
        region = Region.FAN
    else:
        region = Region.SHOCK
    return PhaseLabel(phase, region)


def sigma_left_mc(b: BoundaryParams) -> float:
    C, D = b.C, b.D
    return (3.0 - C - D - C * D) / (4.0 * (1.0 - C * D))


def sigma_right_mc(b: BoundaryParams) -> float:
    A, B = b.A, b.B
    return (1.0 + A + B - 3.0 * A * B) / (4.0 * (1.0 - A * B))


def sigma_left_hd(b: BoundaryParams) -> float:
    A, C, D = b.A, b.C, b.D
    num = A * A + A + 1.0 - A * C * D - A * C - A * D
    return num / ((A + 1.0) ** 2 * (1.0 - C * D))


def sigma_right_hd(b: BoundaryParams) -> float:
    return b.A / (1.0 + b.A)


def sigma_left_ld(b: BoundaryParams) -> float:
    return 1.0 / (1.0 + b.C)


def sigma_right_ld(b: BoundaryParams) -> float:
    A, B, C = b.A, b.B, b.C
    num = A * C + B * C - A * B * C * C - A * B + C - A * B * C
    return num / ((C + 1.0) ** 2 * (1.0 - A * B))


def boundary_sigmas(b: BoundaryParams) -> tuple[float, float]:
    """Limiting densities at sites 1 and N, chosen by the phase of ``(A, C)``."""
    A, C = b.A, b.C
    if A <= 1.0 and C <= 1.0:
        return sigma_left_mc(b), sigma_right_mc(b)
    if A >= C:
        return sigma_left_hd(b), sigma_right_hd(b)
    return sigma_left_ld(b), sigma_right_ld(b)


def limiting_densities(b: BoundaryParams) -> LimitingDensities:
    sl, sr = boundary_sigmas(b)
    phase = classify(b).phase
    if phase is Phase.HIGH_DENSITY:
        bulk = b.A / (1.0 + b.A)
    elif phase is Phase.LOW_DENSITY:
        bulk = 1.0 / (1.0 + b.C)
    elif phase is Phase.COEXISTENCE:
        bulk = None
    else:
        bulk = 0.5
    return LimitingDensities(sl, sr, 1.0 / (1.0 + b.C), b.A / (1.0 + b.A), bulk)


def bulk_profile(b: BoundaryParams, theta: float) -> float:
    """Linear density profile on the coexistence line at macroscopic position ``theta``."""
    if classify(b).phase is not Phase.COEXISTENCE:
        raise WrongPhaseError("bulk_profile is defined on the coexistence line A = C > 1 only")
    if not 0.0 <= theta <= 1.0:
        raise ParameterError("theta must lie in [0, 1]")
    A = b.A
    return (1.0 - theta) / (1.0 + A) + theta * A / (1.0 + A)


def light_mass_split(b: BoundaryParams) -> tuple[float, float]:
    """Asymptotic mass of a single light particle near the left and right ends (MC phase)."""
    label = classify(b)
    if label.phase is not Phase.MAX_CURRENT:
        raise WrongPhaseError(f"light_mass_split needs the maximal current phase, got {label.phase.value}")
    if label.region is Region.BOUNDARY:
        raise WrongPhaseError("AC = 1: boundary densities coincide and the split is undefined")
    sl, sr = boundary_sigmas(b)
    return (sl - 0.5) / (sl - sr), (0.5 - sr) / (sl - sr)


def drift_kappa(rho: float, q: float) -> float:
    """Speed of a second class particle in a Bernoulli(rho) environment."""
    return (1.0 - q) * (1.0 - 2.0 * rho)
