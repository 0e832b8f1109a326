"""
Bounds Calculus
===============

Closed-form theoretical quantities used to read Monte Carlo output:

- KL and chi-square divergences of finite measures
- Fano-type lower bound on multiple-hypothesis testing error, with a
  brute-force oracle over all tests on small supports
- Bernstein tail
- flat transform, V_n^t and its fixed point sigma_n^t for power-form envelopes
- critical levels and accuracy-confidence envelopes

Unnamed constants are always caller supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.optimize import bisect

from .errors import DivergenceError, EnumerationTooLargeError, FixedPointError

NORMALIZATION_TOL = 1e-12
FANO_MAX_SUPPORT = 10
FANO_MAX_M = 3
FIXED_POINT_FLOOR = 1e-12
FIXED_POINT_RTOL = 1e-9


# ============================================================================
# Divergences
# ============================================================================

@dataclass(frozen=True)
class FiniteMeasure:
    """Probability vector on {0, ..., s-1}"""

    weights: tuple[float, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        if not weights:
            raise ValueError("a finite measure needs at least one atom")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError("weights must be finite and nonnegative")
        if abs(math.fsum(weights) - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"weights must sum to 1 (got {math.fsum(weights)})")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "FiniteMeasure":
        return cls(tuple(values))

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def _arrays(mu: FiniteMeasure, nu: FiniteMeasure) -> tuple[np.ndarray, np.ndarray]:
    if mu.size != nu.size:
        raise DivergenceError(f"measures live on supports of size {mu.size} and {nu.size}")
    return mu.array, nu.array


def kl_divergence(mu: FiniteMeasure, nu: FiniteMeasure) -> float:
    """K(mu, nu) = sum mu_i ln(mu_i / nu_i), +inf without absolute continuity"""
    p, q = _arrays(mu, nu)
    if np.any((p > 0) & (q == 0)):
        return math.inf
    mask = p > 0
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def chi2_divergence(mu: FiniteMeasure, nu: FiniteMeasure) -> float:
    """chi^2(mu, nu) = sum (mu_i - nu_i)^2 / nu_i, +inf without absolute continuity"""
    p, q = _arrays(mu, nu)
    if np.any((p > 0) & (q == 0)):
        return math.inf
    mask = q > 0
    return float(np.sum((p[mask] - q[mask]) ** 2 / q[mask]))


# ============================================================================
# Fano-type bounds
# ============================================================================

def fano_bound(M: int, chi: float) -> float:
    """(1/12) min(1, M e^(-3 chi))"""
    if M < 2:
        raise ValueError(f"M must be >= 2; got {M}")
    if chi < 0:
        raise ValueError("chi must be nonnegative")
    if math.isinf(chi):
        return 0.0
    return min(1.0, M * math.exp(-3.0 * chi)) / 12.0


def fano_bound_sharp(M: int, chi: float, grid: int = 4000) -> float:
    """sup over tau in (0,1) of tau M/(tau M + 1) (1 + (chi + sqrt(chi/2)) / ln tau), floored at 0"""
    if M < 2:
        raise ValueError(f"M must be >= 2; got {M}")
    if math.isinf(chi):
        return 0.0
    tau = np.exp(np.linspace(math.log(1e-12), math.log1p(-1e-9), grid))
    values = tau * M / (tau * M + 1.0) * (1.0 + (chi + math.sqrt(chi / 2.0)) / np.log(tau))
    return max(0.0, float(values.max()))


def general_lower_bound(N: int, n: int, gamma_sq: float) -> float:
    """(1/12) min(1, (N-1) exp(-12 n gamma^2)) for N hypotheses at pairwise L2 scale gamma"""
    if N < 2:
        return 0.0
    return min(1.0, (N - 1) * math.exp(-12.0 * n * gamma_sq)) / 12.0


@dataclass(frozen=True)
class FanoOracleResult:
    p_star_min: float
    bound: float
    chi: float
    passed: bool
    skipped: bool = False
    sharp_bound: float = 0.0

    def to_dict(self) -> dict:
        return {
            "p_star_min": self.p_star_min,
            "bound": self.bound,
            "sharp_bound": self.sharp_bound,
            "chi": self.chi if math.isfinite(self.chi) else "inf",
            "pass": self.passed,
            "skipped": self.skipped,
        }


def minimal_test_error(Q: Sequence[FiniteMeasure], chunk_size: int = 1 << 18) -> float:
    """min over disjoint A_0..A_M of max_i Q_i(complement of A_i), by enumeration"""
    M = len(Q) - 1
    s = Q[0].size
    weights = np.stack([q.array for q in Q])
    base = M + 2  # each atom goes to one of A_0..A_M or to none
    total = base ** s
    best = math.inf
    for start in range(0, total, chunk_size):
        flat = np.arange(start, min(total, start + chunk_size))
        assign = np.stack(np.unravel_index(flat, (base,) * s), axis=1)
        errors = np.empty((flat.size, M + 1))
        for i in range(M + 1):
            errors[:, i] = 1.0 - (assign == i) @ weights[i]
        best = min(best, float(errors.max(axis=1).min()))
    return min(1.0, max(0.0, best))


def fano_oracle_verify(Q: Sequence[FiniteMeasure], chi_cap: Optional[float] = None) -> FanoOracleResult:
    """
    Brute-force check of the Fano-type bound on one instance.

    Args:
        Q: M+1 measures on a common support; Q[0] is the reference
        chi_cap: Optional value of chi to use instead of the mean divergence
            (must not be smaller than it)

    Returns:
        FanoOracleResult; instances with infinite chi are skipped
    """
    M = len(Q) - 1
    if M < 2:
        raise ValueError("need at least three measures (M >= 2)")
    s = Q[0].size
    if any(q.size != s for q in Q):
        raise DivergenceError("all measures must share one support")
    if s > FANO_MAX_SUPPORT or M > FANO_MAX_M:
        raise EnumerationTooLargeError()

    chi = sum(kl_divergence(Q[j], Q[0]) for j in range(1, M + 1)) / M
    if chi_cap is not None:
        if chi_cap < chi - NORMALIZATION_TOL:
            raise ValueError(f"chi_cap {chi_cap} is below the mean divergence {chi}")
        chi = float(chi_cap)
    if math.isinf(chi):
        return FanoOracleResult(p_star_min=math.nan, bound=0.0, chi=chi, passed=True, skipped=True)

    p_star = minimal_test_error(Q)
    bound = fano_bound(M, chi)
    return FanoOracleResult(
        p_star_min=p_star,
        bound=bound,
        chi=chi,
        passed=p_star >= bound - NORMALIZATION_TOL,
        sharp_bound=fano_bound_sharp(M, chi),
    )


def random_fano_instance(
    rng: np.random.Generator, support: int, M: int, concentration: float = 1.0
) -> List[FiniteMeasure]:
    """M+1 Dirichlet-distributed measures"""
    draws = rng.dirichlet(np.full(support, concentration), size=M + 1)
    draws /= draws.sum(axis=1, keepdims=True)
    return [FiniteMeasure.from_array(row) for row in draws]


# ============================================================================
# Tails
# ============================================================================

def bernstein_tail(n: int, v: float, R: float, u: float) -> float:
    """exp(-n u^2 / (2 (v + R u / 3)))"""
    if u == 0:
        return 1.0
    if n <= 0 or v < 0 or R < 0 or u < 0:
        raise ValueError("bernstein_tail needs positive n and nonnegative v, R, u")
    return math.exp(-n * u * u / (2.0 * (v + R * u / 3.0)))


def fixed_point_tail(t: float) -> float:
    """min(1, e^(1-t)): probability level attached to the deviation parameter t"""
    return min(1.0, math.exp(1.0 - t))


# ============================================================================
# Power forms and fixed points
# ============================================================================

@dataclass(frozen=True)
class PowerTerm:
    coefficient: float
    exponent: float

    def __post_init__(self):
        if not (self.coefficient >= 0 and math.isfinite(self.coefficient)):
            raise ValueError("power-form coefficients must be finite and nonnegative")
        if not math.isfinite(self.exponent):
            raise ValueError("power-form exponents must be finite")


@dataclass(frozen=True)
class PowerForm:
    """delta -> sum c_i delta^p_i on (0, 1]"""

    terms: tuple[PowerTerm, ...]

    @classmethod
    def of(cls, *pairs: tuple[float, float]) -> "PowerForm":
        return cls(tuple(PowerTerm(float(c), float(p)) for c, p in pairs))

    def __call__(self, delta):
        delta = np.asarray(delta, dtype=float)
        value = sum(term.coefficient * delta ** term.exponent for term in self.terms)
        return float(value) if np.ndim(value) == 0 else value


def flat_transform(psi: PowerForm, delta):
    """Per-term sup over sigma in [delta, 1] of psi(sigma)/sigma, summed"""
    d = np.asarray(delta, dtype=float)
    if np.any((d <= 0) | (d > 1)):
        raise ValueError("delta must lie in (0, 1]")
    value = np.zeros_like(d)
    for term in psi.terms:
        if term.exponent <= 1.0:
            value = value + term.coefficient * d ** (term.exponent - 1.0)
        else:
            value = value + term.coefficient
    return float(value) if value.ndim == 0 else value


def v_n_t(delta, D2: PowerForm, phi_n: PowerForm, t: float, n: int):
    """4 [phi_flat(delta) + sqrt(D2_flat(delta) t / (n delta)) + t / (n delta)]"""
    d = np.asarray(delta, dtype=float)
    ratio = t / (n * d)
    value = 4.0 * (flat_transform(phi_n, d) + np.sqrt(flat_transform(D2, d) * ratio) + ratio)
    return float(value) if np.ndim(value) == 0 else value


def _check_monotone(D2: PowerForm, phi_n: PowerForm, t: float, n: int) -> None:
    grid = np.exp(np.linspace(math.log(FIXED_POINT_FLOOR), 0.0, 200))
    values = v_n_t(grid, D2, phi_n, t, n)
    if np.any(np.diff(values) > 1e-12 * np.abs(values[:-1])):
        raise FixedPointError()


def sigma_n_t(D2: PowerForm, phi_n: PowerForm, t: float, n: int) -> float:
    """inf{sigma : V_n^t(sigma) <= 1} by bisection on log sigma over [1e-12, 1]"""
    if t <= 0 or n < 1:
        raise ValueError("sigma_n_t needs t > 0 and n >= 1")
    _check_monotone(D2, phi_n, t, n)
    if v_n_t(1.0, D2, phi_n, t, n) > 1.0:
        return 1.0
    if v_n_t(FIXED_POINT_FLOOR, D2, phi_n, t, n) <= 1.0:
        return FIXED_POINT_FLOOR
    root = bisect(
        lambda u: v_n_t(math.exp(u), D2, phi_n, t, n) - 1.0,
        math.log(FIXED_POINT_FLOOR),
        0.0,
        xtol=FIXED_POINT_RTOL,
        maxiter=200,
    )
    return math.exp(root)


def sigma_n_t_grid(D2: PowerForm, phi_n: PowerForm, t: float, n: int, points: int = 1_000_000) -> float:
    """First point of a log-spaced grid on [1e-12, 1] where V_n^t <= 1"""
    grid = np.exp(np.linspace(math.log(FIXED_POINT_FLOOR), 0.0, points))
    below = v_n_t(grid, D2, phi_n, t, n) <= 1.0
    return float(grid[np.argmax(below)]) if below.any() else 1.0


def erm_power_forms(
    n: int, kappa: float, rho: float, c1: float = 1.0, c4: float = 1.0, include_floor: bool = True
) -> tuple[PowerForm, PowerForm]:
    """Envelopes D^2(delta) = c1^2 delta^(1/kappa) and
    phi_n(delta) = c4 (n^(-1/2) delta^((1-rho)/(2 kappa)) + n^(-1/(1+rho)))"""
    D2 = PowerForm.of((c1 * c1, 1.0 / kappa))
    terms = [(c4 * n ** -0.5, (1.0 - rho) / (2.0 * kappa))]
    if include_floor:
        terms.append((c4 * n ** (-1.0 / (1.0 + rho)), 0.0))
    return D2, PowerForm.of(*terms)


def sigma_comparator(n: int, t: float, kappa: float, rho: float, c7: float = 1.0) -> float:
    """c7 [n^(-kappa/(2 kappa - 1 + rho)) + (t/n)^(kappa/(2 kappa - 1))]"""
    return c7 * (n ** (-kappa / (2.0 * kappa - 1.0 + rho)) + (t / n) ** (kappa / (2.0 * kappa - 1.0)))


def calibrate_comparator(
    points: Sequence[tuple[int, float]],
    kappa: float,
    rho: float,
    c1: float = 1.0,
    c4: float = 1.0,
    include_floor: bool = True,
) -> float:
    """Smallest c7 making the comparator dominate sigma_n^t on the calibration points"""
    ratios = []
    for n, t in points:
        D2, phi_n = erm_power_forms(n, kappa, rho, c1, c4, include_floor)
        ratios.append(sigma_n_t(D2, phi_n, t, n) / sigma_comparator(n, t, kappa, rho))
    return max(ratios)


# ============================================================================
# Levels and envelopes
# ============================================================================

def margin_exponent(alpha: float) -> float:
    """(2+alpha)/(1+alpha), 1 at alpha = inf"""
    return 1.0 if math.isinf(alpha) else (2.0 + alpha) / (1.0 + alpha)


def critical_lambda(n: int, alpha: float, r_prime: float, D: float) -> float:
    """D n^(-(1+alpha)/(2+alpha+r'))"""
    exponent = 1.0 if math.isinf(alpha) else (1.0 + alpha) / (2.0 + alpha + r_prime)
    return D * n ** -exponent


def lambda_floor_bayes(n: int, alpha: float, rho: float, c_prime: float) -> float:
    """c' n^(-(1+alpha)/(2+alpha(1+rho))), exponent 1/(1+rho) at alpha = inf"""
    exponent = 1.0 / (1.0 + rho) if math.isinf(alpha) else (1.0 + alpha) / (2.0 + alpha * (1.0 + rho))
    return c_prime * n ** -exponent


@dataclass(frozen=True)
class Envelopes:
    upper: float
    lower: float
    exponent: float


def ac_envelopes(
    n: int,
    lam: float,
    alpha: float,
    c_upper: float,
    prefactor_upper: float,
    b: int,
    c_lower: float,
) -> Envelopes:
    """Upper prefactor exp(-c n lam^e) and lower (1/12) min(1, 2^(b/16) exp(-c' n lam^e))"""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1]; got {lam}")
    exponent = margin_exponent(alpha)
    scale = n * lam ** exponent
    upper = prefactor_upper * math.exp(-c_upper * scale)
    lower = min(1.0, 2.0 ** (b / 16.0) * math.exp(-c_lower * scale)) / 12.0
    return Envelopes(upper=upper, lower=lower, exponent=exponent)


@dataclass(frozen=True)
class EntropyExponents:
    r: float
    rho: float
    r_prime: float


def holder_entropy_exponents(d: int, beta: float, alpha: float) -> EntropyExponents:
    """r = d/beta for the regression class, rho = d/(alpha beta) for the induced
    rule class, r' = alpha rho"""
    rho = d / (alpha * beta)
    return EntropyExponents(r=d / beta, rho=rho, r_prime=alpha * rho)
