"""
Monte Carlo Engine
==================

Replicated estimation of accuracy-confidence functions

    lambda -> P(R(f_hat_n) - R* >= lambda)

on lower-bound families, with:

- counter-based seeding: every (master, sigma, replication) triple owns its
  own generator, so tallies do not depend on worker count or scheduling
- exact excess risk of every trained rule (closed forms of the family)
- Clopper-Pearson intervals
- an exact oracle for the cellwise majority classifier, also over
  level-matched families (delta tied to lambda)
- log-log exponent fits
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gammaln
from scipy.stats import beta as beta_dist
from scipy.stats import binom, linregress, poisson

from .bounds_calculus import margin_exponent
from .classifiers import NetDictionary, RuleClass, class_erm, net_erm
from .core_model import CellwiseRegression, CellwiseRule, PredictionRule
from .errors import IncompatibleClassifierError, RateFitError
from .lb_family import LowerBoundFamily, delta_for_level, maximal_separation_subset, sample_dataset
from .observability import PerformanceMonitor, get_logger

logger = get_logger(__name__)

MASK64 = (1 << 64) - 1
EXCEED_RTOL = 1e-12
CI_LEVEL = 0.95


# ============================================================================
# Seeding
# ============================================================================

def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _rotl(x: int, r: int) -> int:
    x &= MASK64
    return ((x << r) | (x >> (64 - r))) & MASK64


def derive_seed(master: int, sigma_index: int, rep_index: int) -> int:
    """64-bit seed of replication ``rep_index`` under code ``sigma_index``"""
    state = _splitmix64(master & MASK64)
    state = _splitmix64(state ^ _rotl(sigma_index, 17))
    return _splitmix64(state ^ _rotl(rep_index, 41))


# ============================================================================
# Intervals
# ============================================================================

def clopper_pearson(k, m: int, level: float = CI_LEVEL) -> tuple[np.ndarray, np.ndarray]:
    """Exact binomial interval for k successes out of m; (0, 1 - (a/2)^(1/m)) at k = 0"""
    if m < 1:
        raise ValueError("m must be >= 1")
    k = np.asarray(k, dtype=float)
    tail = (1.0 - level) / 2.0
    with np.errstate(invalid="ignore"):
        lo = np.where(k == 0, 0.0, beta_dist.ppf(tail, k, m - k + 1))
        hi = np.where(k == m, 1.0, beta_dist.ppf(1.0 - tail, k + 1, m - k))
    hi = np.where(k == 0, 1.0 - tail ** (1.0 / m), hi)
    return lo, hi


# ============================================================================
# Estimates
# ============================================================================

@dataclass(frozen=True)
class WorstCase:
    lam: float
    sigma_index: int
    p_hat: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True, eq=False)
class ACEstimate:
    """
    Exceedance tallies at one sample size.

    ``exceed_counts[s, j]`` counts replications under code ``sigma_indices[s]``
    whose excess risk reached ``lambda_grid[j]``.
    """

    family_id: str
    n: int
    m: int
    lambda_grid: tuple[float, ...]
    sigma_indices: tuple[int, ...]
    exceed_counts: np.ndarray
    mean_excess: np.ndarray

    @property
    def p_hat(self) -> np.ndarray:
        return self.exceed_counts / self.m

    def ci(self) -> tuple[np.ndarray, np.ndarray]:
        return clopper_pearson(self.exceed_counts, self.m)

    def worst_case(self) -> List[WorstCase]:
        """Per lambda, the code with the largest p_hat (smallest index on ties)"""
        lo, hi = self.ci()
        out = []
        for j, lam in enumerate(self.lambda_grid):
            s = int(np.argmax(self.exceed_counts[:, j]))
            out.append(WorstCase(lam, self.sigma_indices[s], float(self.p_hat[s, j]), float(lo[s, j]), float(hi[s, j])))
        return out

    def rows(self) -> List[Dict[str, Any]]:
        lo, hi = self.ci()
        rows = []
        for s, sigma in enumerate(self.sigma_indices):
            for j, lam in enumerate(self.lambda_grid):
                rows.append(
                    {
                        "family_id": self.family_id,
                        "sigma_index": sigma,
                        "n": self.n,
                        "lambda": lam,
                        "m": self.m,
                        "exceed_count": int(self.exceed_counts[s, j]),
                        "p_hat": float(self.p_hat[s, j]),
                        "ci_lo": float(lo[s, j]),
                        "ci_hi": float(hi[s, j]),
                    }
                )
        return rows

    def mean_excess_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "family_id": self.family_id,
                "sigma_index": sigma,
                "n": self.n,
                "m": self.m,
                "mean_excess": float(self.mean_excess[s]),
            }
            for s, sigma in enumerate(self.sigma_indices)
        ]

    @classmethod
    def from_rows(cls, rows: Iterable[Dict[str, Any]], mean_rows: Iterable[Dict[str, Any]] = ()) -> List["ACEstimate"]:
        """Rebuild one estimate per n from CSV rows"""
        grouped: Dict[int, List[Dict[str, Any]]] = {}
        for row in rows:
            grouped.setdefault(int(row["n"]), []).append(row)
        means: Dict[tuple[int, int], float] = {
            (int(r["n"]), int(r["sigma_index"])): float(r["mean_excess"]) for r in mean_rows
        }
        estimates = []
        for n in sorted(grouped):
            block = grouped[n]
            sigmas = sorted({int(r["sigma_index"]) for r in block})
            lambdas = sorted({float(r["lambda"]) for r in block})
            counts = np.zeros((len(sigmas), len(lambdas)), dtype=np.int64)
            for r in block:
                counts[sigmas.index(int(r["sigma_index"])), lambdas.index(float(r["lambda"]))] = int(r["exceed_count"])
            estimates.append(
                cls(
                    family_id=str(block[0]["family_id"]),
                    n=n,
                    m=int(block[0]["m"]),
                    lambda_grid=tuple(lambdas),
                    sigma_indices=tuple(sigmas),
                    exceed_counts=counts,
                    mean_excess=np.array([means.get((n, s), math.nan) for s in sigmas]),
                )
            )
        return estimates


# ============================================================================
# Classifier specs
# ============================================================================

@dataclass(frozen=True, eq=False)
class ClassifierSpec:
    """net_erm over ``net`` or class_erm over ``rules``"""

    kind: str
    net: Optional[NetDictionary] = None
    rules: Optional[RuleClass] = None

    def __post_init__(self):
        if self.kind == "net_erm" and self.net is None:
            raise ValueError("net_erm needs a net")
        if self.kind == "class_erm" and self.rules is None:
            raise ValueError("class_erm needs a rule class")
        if self.kind not in ("net_erm", "class_erm"):
            raise ValueError(f"unknown classifier kind {self.kind!r}")

    def train(self, D) -> PredictionRule:
        if self.kind == "net_erm":
            return net_erm(self.net, D)  # type: ignore[arg-type]
        return class_erm(self.rules, D)  # type: ignore[arg-type]


def validate_classifier(family: LowerBoundFamily, spec: ClassifierSpec) -> None:
    """Reject classifiers whose rules have no closed-form excess on the family"""
    if spec.net is not None:
        if spec.net.dimension != family.d:
            raise IncompatibleClassifierError(f"net dimension {spec.net.dimension} != family d {family.d}")
        for member in spec.net.members:
            if isinstance(member, CellwiseRegression) and member.family.family_id != family.family_id:
                raise IncompatibleClassifierError("net built from another family")
    if spec.rules is not None:
        if spec.rules.grid is not None and spec.rules.grid != family.grid:
            raise IncompatibleClassifierError("product class grid differs from the family grid")
        for rule in spec.rules.rules:
            if not (isinstance(rule, CellwiseRule) and rule.grid == family.grid):
                raise IncompatibleClassifierError("explicit classes must hold cellwise rules on the family grid")


# ============================================================================
# Replications
# ============================================================================

def _run_block(task: tuple) -> np.ndarray:
    """Excess risks of replications [start, stop) under one code"""
    family, sigma_index, start, stop, spec, n, master_seed = task
    dist = family.distribution(sigma_index)
    out = np.empty(stop - start)
    for offset, rep in enumerate(range(start, stop)):
        D = sample_dataset(family, sigma_index, n, derive_seed(master_seed, sigma_index, rep))
        excess = dist.exact_excess(spec.train(D))
        if excess is None:
            raise IncompatibleClassifierError("trained rule has no closed-form excess")
        out[offset] = excess
    return out


def _blocks(m: int, workers: int) -> List[tuple[int, int]]:
    size = max(1, math.ceil(m / (4 * workers)))
    return [(lo, min(m, lo + size)) for lo in range(0, m, size)]


def run_ac(
    family: LowerBoundFamily,
    sigma_subset: Sequence[int],
    classifier: ClassifierSpec,
    n: int,
    m: int,
    lambda_grid: Sequence[float],
    master_seed: int,
    workers: int = 1,
    monitor: Optional[PerformanceMonitor] = None,
) -> ACEstimate:
    """
    Estimate the AC-function of a classifier under each code of a subset.

    Args:
        family: Lower-bound family
        sigma_subset: Code indices to simulate
        classifier: Trained procedure
        n: Sample size
        m: Replications per code
        lambda_grid: Nondecreasing levels
        master_seed: Root of every replication seed
        workers: Process count; results do not depend on it

    Returns:
        ACEstimate with exceedance tallies and mean excess per code
    """
    if m < 1:
        raise ValueError(f"m must be >= 1; got {m}")
    if n < 1:
        raise ValueError(f"n must be >= 1; got {n}")
    if not sigma_subset:
        raise ValueError("sigma_subset must be nonempty")
    lambdas = np.asarray(lambda_grid, dtype=float)
    if lambdas.size == 0 or np.any(np.diff(lambdas) < 0):
        raise ValueError("lambda_grid must be nonempty and sorted ascending")
    validate_classifier(family, classifier)
    for sigma in sigma_subset:
        family.sigma(int(sigma))

    blocks = _blocks(m, max(1, workers))
    tasks = [
        (family, int(sigma), lo, hi, classifier, n, int(master_seed)) for sigma in sigma_subset for lo, hi in blocks
    ]
    stage = f"run_ac n={n}"
    if monitor is not None:
        with monitor.timed(stage):
            results = _map(tasks, workers)
    else:
        results = _map(tasks, workers)

    per_sigma = len(blocks)
    threshold = lambdas * (1.0 - EXCEED_RTOL)
    counts = np.zeros((len(sigma_subset), lambdas.size), dtype=np.int64)
    means = np.zeros(len(sigma_subset))
    for s in range(len(sigma_subset)):
        excess = np.concatenate(results[s * per_sigma:(s + 1) * per_sigma])
        counts[s] = (excess[:, None] >= threshold[None, :]).sum(axis=0)
        means[s] = math.fsum(excess) / m

    logger.info("AC run completed", n=n, m=m, codes=len(sigma_subset), workers=workers)
    return ACEstimate(
        family_id=family.family_id,
        n=n,
        m=m,
        lambda_grid=tuple(float(v) for v in lambdas),
        sigma_indices=tuple(int(s) for s in sigma_subset),
        exceed_counts=counts,
        mean_excess=means,
    )


def _map(tasks: List[tuple], workers: int) -> List[np.ndarray]:
    if workers <= 1:
        return [_run_block(task) for task in tasks]
    with multiprocessing.Pool(processes=workers) as pool:
        return pool.map(_run_block, tasks)


# ============================================================================
# Exact oracle for the cellwise majority classifier
# ============================================================================

def flip_probability(m, a: float, sign: int) -> np.ndarray:
    """P(majority label of m plateau samples differs from the Bayes label)"""
    m = np.asarray(m)
    cutoff = np.ceil(m / 2.0) - 1
    if sign > 0:
        return binom.cdf(cutoff, m, (1.0 + a) / 2.0)
    return binom.sf(cutoff, m, (1.0 - a) / 2.0)


def flip_count_distribution(family: LowerBoundFamily, sigma_index: int, n: int) -> np.ndarray:
    """
    Law of the number of cells whose majority label is wrong, for n draws
    from P_sigma; entry j is P(j flipped cells).

    Exact over the multinomial occupancy of the b cells and the null set:
    cells are convolved under Poisson(n w) occupancy, then the total plateau
    count is reweighted from Poisson(n bw) to Binomial(n, bw).
    """
    sigma = family.sigma(sigma_index)
    b, w, bw, a = family.b, family.w, family.bw, family.a
    occupancy = np.arange(n + 1)
    pmf = poisson.pmf(occupancy, n * w)
    support = int(np.flatnonzero(pmf)[-1]) + 1
    occupancy, pmf = occupancy[:support], pmf[:support]
    # poly[s, j]: Poisson-weighted mass of s plateau samples and j flips
    poly = np.zeros((n + 1, b + 1))
    poly[0, 0] = 1.0
    for k in range(b):
        flip = flip_probability(occupancy, a, int(sigma[k]))
        stay = fftconvolve(poly, (pmf * (1.0 - flip))[:, None], axes=0)[: n + 1]
        move = fftconvolve(poly[:, :-1], (pmf * flip)[:, None], axes=0)[: n + 1]
        stay[:, 1:] += move
        # FFT rounding leaves tiny negative entries
        poly = np.clip(stay, 0.0, None)

    s = np.arange(n + 1)
    with np.errstate(divide="ignore"):
        log_factor = (
            gammaln(n + 1)
            - gammaln(n - s + 1)
            - s * math.log(n)
            + (n - s) * math.log1p(-bw)
            + n * bw
        )
        log_poly = np.log(poly)
    terms = np.where(poly > 0, np.exp(log_poly + log_factor[:, None]), 0.0)
    return terms.sum(axis=0)


def oracle_exceedance(
    family: LowerBoundFamily, sigma_index: int, n: int, lambda_grid: Sequence[float]
) -> np.ndarray:
    """P(excess >= lambda) for the cellwise majority classifier, per lambda"""
    law = flip_count_distribution(family, sigma_index, n)
    excess = np.arange(family.b + 1) * family.excess_unit
    lambdas = np.asarray(lambda_grid, dtype=float)
    reached = excess[None, :] >= lambdas[:, None] * (1.0 - EXCEED_RTOL)
    return np.clip((reached * law[None, :]).sum(axis=1), 0.0, 1.0)


def level_matched_family(template: LowerBoundFamily, lam: float) -> LowerBoundFamily:
    """
    ``template`` with delta chosen so that lambda0 * delta = lam.

    One wrong cell then costs 16^((1+alpha)/alpha) / b times lam, whatever lam is.
    """
    delta = delta_for_level(lam, template.alpha, template.C, template.c2)
    return replace(template, delta=delta)


def level_matched_exceedance(
    template: LowerBoundFamily, n: int, lambdas: Sequence[float], sigma_subset_size: int = 10
) -> List[tuple[float, float]]:
    """(lambda, worst-case oracle P(excess >= lambda)) with one level-matched family per lambda"""
    subset = maximal_separation_subset(template, sigma_subset_size)
    pairs = []
    for lam in lambdas:
        family = level_matched_family(template, lam)
        worst = max(float(oracle_exceedance(family, s, n, [lam])[0]) for s in subset)
        logger.debug("Level-matched exceedance", lam=lam, delta=family.delta, n=n, p=worst)
        pairs.append((float(lam), worst))
    return pairs


# ============================================================================
# Grids and fits
# ============================================================================

def lambda_grid(
    lo: float,
    hi: float,
    points: int,
    scale: str = "linear",
    unit: str = "absolute",
    family: Optional[LowerBoundFamily] = None,
) -> tuple[float, ...]:
    """Ascending level grid; with unit "excess_unit" the bounds are multiples of a*w"""
    if points < 1:
        raise ValueError("points must be >= 1")
    if hi < lo:
        raise ValueError("lambda max must not be below lambda min")
    if scale == "linear":
        grid = np.linspace(lo, hi, points)
    elif scale == "geometric":
        if lo <= 0:
            raise ValueError("geometric grids need a positive minimum")
        grid = np.geomspace(lo, hi, points)
    else:
        raise ValueError(f"unknown lambda scale {scale!r}")
    if unit == "excess_unit":
        if family is None:
            raise ValueError("excess_unit grids need a family")
        grid = grid * family.excess_unit
    elif unit != "absolute":
        raise ValueError(f"unknown lambda unit {unit!r}")
    return tuple(float(v) for v in grid)


@dataclass(frozen=True)
class RateFit:
    kind: str
    points: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r2: float
    excluded: tuple[Any, ...] = ()
    theory: Optional[float] = None
    alpha: Optional[float] = None
    r_prime: Optional[float] = None

    def row(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "n_points": len(self.points),
            "alpha": self.alpha,
            "r_prime": self.r_prime,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.row()
        data["theory"] = self.theory
        data["points"] = [list(p) for p in self.points]
        data["excluded"] = [list(e) if isinstance(e, tuple) else e for e in self.excluded]
        return data


def _fit(kind: str, x: Sequence[float], y: Sequence[float], **extra: Any) -> RateFit:
    if len(x) < 3:
        raise RateFitError(f"{kind} fit needs at least 3 usable points; got {len(x)}")
    if len(set(x)) < 2:
        raise RateFitError(f"{kind} fit needs distinct abscissae")
    result = linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    r2 = float(result.rvalue) ** 2
    return RateFit(
        kind=kind,
        points=tuple((float(a), float(b)) for a, b in zip(x, y)),
        slope=float(result.slope),
        intercept=float(result.intercept),
        r2=min(1.0, max(0.0, r2)),
        **extra,
    )


PairsOrEstimate = Union[ACEstimate, Sequence[tuple[float, float]]]


def _level_pairs(source: PairsOrEstimate) -> List[tuple[float, float]]:
    if isinstance(source, ACEstimate):
        return [(wc.lam, wc.p_hat) for wc in source.worst_case()]
    return [(float(lam), float(p)) for lam, p in source]


def fit_lambda_exponent(estimates: PairsOrEstimate, alpha: Optional[float] = None) -> RateFit:
    """Slope of ln(-ln p_hat) against ln lambda; p_hat in {0, 1} is excluded"""
    x, y, excluded = [], [], []
    for lam, p in _level_pairs(estimates):
        if lam <= 0 or p <= 0 or p >= 1:
            excluded.append((lam, p))
            continue
        x.append(math.log(lam))
        y.append(math.log(-math.log(p)))
    if excluded:
        logger.info("Excluded fit points", kind="lambda_exponent", count=len(excluded))
    theory = margin_exponent(alpha) if alpha is not None else None
    return _fit("lambda_exponent", x, y, excluded=tuple(excluded), theory=theory, alpha=alpha)


def fit_concentration_slope(
    estimates: Sequence[ACEstimate] | Sequence[tuple[int, float, float]], alpha: float
) -> RateFit:
    """Slope c of -ln p_hat against n lambda^((2+alpha)/(1+alpha)) across sample sizes"""
    triples: List[tuple[int, float, float]] = []
    for item in estimates:
        if isinstance(item, ACEstimate):
            triples.extend((item.n, wc.lam, wc.p_hat) for wc in item.worst_case())
        else:
            n, lam, p = item
            triples.append((int(n), float(lam), float(p)))
    if len({n for n, _, _ in triples}) < 3:
        raise RateFitError("concentration fit needs at least 3 sample sizes")
    exponent = margin_exponent(alpha)
    x, y, excluded = [], [], []
    for n, lam, p in triples:
        if lam <= 0 or p <= 0 or p >= 1:
            excluded.append((n, lam, p))
            continue
        x.append(n * lam ** exponent)
        y.append(-math.log(p))
    return _fit("concentration_slope", x, y, excluded=tuple(excluded), theory=None, alpha=alpha)


def n_rate_exponent(alpha: float, r_prime: float) -> float:
    """-(1+alpha)/(2+alpha+r'), -1 at alpha = inf"""
    if math.isinf(alpha):
        return -1.0
    return -(1.0 + alpha) / (2.0 + alpha + r_prime)


def fit_n_rate(mean_excess: Sequence[tuple[int, float]], alpha: float, r_prime: float) -> RateFit:
    """Slope of ln mean excess against ln n"""
    kept, dropped = [], []
    for n, value in mean_excess:
        if value <= 0:
            dropped.append((int(n), float(value)))
        else:
            kept.append((int(n), float(value)))
    if dropped:
        logger.warning("Dropped zero mean excess", points=len(dropped))
    if len(kept) < 4:
        raise RateFitError(f"n-rate fit needs at least 4 sample sizes; got {len(kept)}")
    ns = [n for n, _ in kept]
    if max(ns) < 16 * min(ns):
        raise RateFitError("n-rate fit needs sample sizes spanning a factor of 16")
    return _fit(
        "n_rate",
        [math.log(n) for n in ns],
        [math.log(v) for _, v in kept],
        excluded=tuple(dropped),
        theory=n_rate_exponent(alpha, r_prime),
        alpha=alpha,
        r_prime=r_prime,
    )


def mean_excess_by_n(estimates: Sequence[ACEstimate]) -> List[tuple[int, float]]:
    """Worst mean excess over the simulated codes, per n"""
    return [(est.n, float(np.nanmax(est.mean_excess))) for est in estimates]
