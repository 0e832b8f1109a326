"""
Margin Calculus
===============

Margin-condition parameters and checkable predicates:

- mass form: mu_X(0 < |eta - 1/2| <= t) <= C_M t^alpha
- set form: integral_G |2 eta - 1| dmu_X >= c_M mu_X(G)^kappa
- comparison inequalities between excess risk, L1 disagreement and sup-norm
  distance of regression functions.

All L1 distances used by the comparison checks exclude the zero-margin set
{eta = 1/2}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Union

import numpy as np

from .core_model import (
    MarginSpec,
    PredictionRule,
    RegressionFn,
    bayes_rule,
    closed_form_excess,
    essential_sup,
    excess_risk_quadrature,
    integrate,
    l1_disagreement,
)
from .errors import MarginParameterError, UnsupportedDistributionError, ZeroMarginSetError
from .observability import get_logger

logger = get_logger(__name__)

CLOSED_FORM_TOL = 1e-12
QUADRATURE_TOL = 1e-6


def kappa_of_alpha(alpha: float) -> float:
    if not alpha > 0:
        raise MarginParameterError(f"alpha must be positive, got {alpha}")
    if math.isinf(alpha):
        return 1.0
    return (1.0 + alpha) / alpha


def c_M_of(C_M: float, alpha: float) -> float:
    if not C_M > 0:
        raise MarginParameterError(f"C_M must be positive, got {C_M}")
    if not alpha > 0:
        raise MarginParameterError(f"alpha must be positive, got {alpha}")
    if math.isinf(alpha):
        return 1.0
    return (2.0 * C_M) ** (-1.0 / alpha)


# ============================================================================
# Reports and set descriptors
# ============================================================================

@dataclass(frozen=True)
class MarginCheck:
    key: Union[float, str]
    lhs: float
    rhs: float
    passed: bool
    ratio: float


@dataclass
class MarginReport:
    checks: List[MarginCheck] = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def worst_ratio(self) -> float:
        return max((c.ratio for c in self.checks), default=0.0)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "worst_ratio": self.worst_ratio,
            "checks": [
                {"key": c.key, "lhs": c.lhs, "rhs": c.rhs, "pass": c.passed} for c in self.checks
            ],
        }


@dataclass(frozen=True)
class PlateauCells:
    """Union of plateau subcubes of a lower-bound family"""
    cells: frozenset[int]

    def __init__(self, cells):
        object.__setattr__(self, "cells", frozenset(int(k) for k in cells))

    @property
    def label(self) -> str:
        return "cells:" + ",".join(str(k) for k in sorted(self.cells))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, integrated by quadrature"""
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @property
    def label(self) -> str:
        return f"box:{self.lower}-{self.upper}"

    def contains(self, X: np.ndarray) -> np.ndarray:
        return np.all((X >= np.asarray(self.lower)) & (X <= np.asarray(self.upper)), axis=1)


SetDescriptor = Union[PlateauCells, Box]


def _upper_check(key, lhs: float, rhs: float, tol: float) -> MarginCheck:
    """lhs <= rhs"""
    return MarginCheck(key, lhs, rhs, lhs <= rhs + tol, lhs / (rhs + tol))


def _lower_check(key, lhs: float, rhs: float, tol: float) -> MarginCheck:
    """lhs >= rhs"""
    return MarginCheck(key, lhs, rhs, lhs >= rhs - tol, rhs / (lhs + tol))


# ============================================================================
# Margin condition, both forms
# ============================================================================

def margin_mass(dist: Any, t: float, resolution: Optional[int] = None) -> tuple[float, bool]:
    """mu_X(0 < |eta - 1/2| <= t) and whether it came from a closed form"""
    hook = getattr(dist, "margin_mass", None)
    if callable(hook):
        value = hook(t)
        if value is not None:
            return float(value), True
    eta = dist.eta

    def band(X: np.ndarray) -> np.ndarray:
        gap = np.abs(eta.evaluate(X) - 0.5)
        return (gap > 0) & (gap <= t)

    return integrate(dist, band, resolution), False


def check_margin_2_15(
    dist: Any,
    alpha: float,
    C_M: float,
    t_grid: Sequence[float],
    resolution: Optional[int] = None,
) -> MarginReport:
    """Check mu_X(0 < |eta - 1/2| <= t) <= C_M t^alpha on every t of the grid."""
    if not t_grid:
        raise ValueError("t_grid must be nonempty")
    kappa_of_alpha(alpha)
    if C_M < 0.5:
        logger.warning("C_M below 1/2", C_M=C_M)
    report = MarginReport()
    for t in t_grid:
        if not 0.0 < t < 1.0:
            raise ValueError(f"t must lie in (0,1), got {t}")
        lhs, exact = margin_mass(dist, t, resolution)
        rhs = 0.0 if math.isinf(alpha) else C_M * t ** alpha
        report.checks.append(_upper_check(t, lhs, rhs, CLOSED_FORM_TOL if exact else QUADRATURE_TOL))
    return report


def _set_stats(dist: Any, descriptor: SetDescriptor, resolution: Optional[int]) -> tuple[float, float, bool]:
    """(integral of |2 eta - 1| over G, mu_X(G), exact)"""
    hook = getattr(dist, "exact_set_stats", None)
    if callable(hook):
        stats = hook(descriptor)
        if stats is not None:
            return float(stats[0]), float(stats[1]), True
    if not isinstance(descriptor, Box):
        raise UnsupportedDistributionError()
    eta = dist.eta

    zero_mass = integrate(
        dist, lambda X: descriptor.contains(X) & (eta.evaluate(X) == 0.5), resolution
    )
    if zero_mass > 0:
        raise ZeroMarginSetError()
    integral = integrate(
        dist, lambda X: descriptor.contains(X) * np.abs(2.0 * eta.evaluate(X) - 1.0), resolution
    )
    mass = integrate(dist, descriptor.contains, resolution)
    return integral, mass, False


def check_margin_2_12(
    dist: Any,
    kappa: float,
    c_M: float,
    sets: Sequence[SetDescriptor],
    resolution: Optional[int] = None,
) -> MarginReport:
    """Check integral_G |2 eta - 1| dmu_X >= c_M mu_X(G)^kappa for every G."""
    report = MarginReport()
    for descriptor in sets:
        integral, mass, exact = _set_stats(dist, descriptor, resolution)
        rhs = c_M * mass ** kappa
        report.checks.append(
            _lower_check(descriptor.label, integral, rhs, CLOSED_FORM_TOL if exact else QUADRATURE_TOL)
        )
    return report


# ============================================================================
# Comparison inequalities
# ============================================================================

@dataclass(frozen=True)
class ExcessComparison:
    bound: float
    excess: float
    l1: float
    passed: bool


def lemma23_check(
    f: PredictionRule,
    dist: Any,
    margin: MarginSpec,
    resolution: Optional[int] = None,
) -> ExcessComparison:
    """Excess risk of f against c_M * ||f - f*||_1^kappa (zero-margin set excluded)."""
    f_star = bayes_rule(dist.eta)
    exact = closed_form_excess(f, dist) is not None
    excess = excess_risk_quadrature(f, dist, resolution)
    l1 = l1_disagreement(f, f_star, dist, exclude_zero_margin=True, resolution=resolution)
    bound = margin.c_M * l1 ** margin.kappa
    tol = CLOSED_FORM_TOL if exact else QUADRATURE_TOL
    return ExcessComparison(bound=bound, excess=excess, l1=l1, passed=excess >= bound - tol)


@dataclass(frozen=True)
class TransferResult:
    sup_distance: float
    l1: float
    l1_bound: float
    excess: float
    excess_bound: float
    l1_bound_pass: bool
    excess_bound_pass: bool


def sup_distance(eta_bar: RegressionFn, dist: Any, resolution: Optional[int] = None) -> tuple[float, bool]:
    hook = getattr(dist, "exact_sup_distance", None)
    if callable(hook):
        value = hook(eta_bar)
        if value is not None:
            return float(value), True
    eta = dist.eta
    return essential_sup(lambda X: np.abs(eta_bar.evaluate(X) - eta.evaluate(X)), dist, resolution), False


def supnorm_transfer_check(
    eta_bar: RegressionFn,
    dist: Any,
    margin: MarginSpec,
    resolution: Optional[int] = None,
) -> TransferResult:
    """Plug-in rule of eta_bar against the sup-norm distance ||eta_bar - eta||_inf:

    ||f_bar - f*||_1 <= 2 C_M ||.||^alpha and R(f_bar) - R* <= 2 C_M ||.||^(1+alpha).
    """
    distance, exact_sup = sup_distance(eta_bar, dist, resolution)
    f_bar = bayes_rule(eta_bar)
    f_star = bayes_rule(dist.eta)
    exact_excess = closed_form_excess(f_bar, dist) is not None
    l1 = l1_disagreement(f_bar, f_star, dist, exclude_zero_margin=True, resolution=resolution)
    excess = excess_risk_quadrature(f_bar, dist, resolution)
    alpha = margin.alpha
    if math.isinf(alpha):
        l1_bound = 0.0 if distance < 1.0 else 2.0 * margin.C_M
        excess_bound = l1_bound * distance
    else:
        l1_bound = 2.0 * margin.C_M * distance ** alpha
        excess_bound = 2.0 * margin.C_M * distance ** (1.0 + alpha)
    tol = CLOSED_FORM_TOL if (exact_sup and exact_excess) else QUADRATURE_TOL
    return TransferResult(
        sup_distance=distance,
        l1=l1,
        l1_bound=l1_bound,
        excess=excess,
        excess_bound=excess_bound,
        l1_bound_pass=l1 <= l1_bound + tol,
        excess_bound_pass=excess <= excess_bound + tol,
    )


def margin_spec_for_family(family: Any) -> MarginSpec:
    """MarginSpec(alpha, C (2/c2)^alpha) of a lower-bound family"""
    return MarginSpec(family.alpha, family.margin_constant)
