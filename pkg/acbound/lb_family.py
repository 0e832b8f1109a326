"""
Lower-Bound Family
==================

Finite family of distributions {P_sigma} on [0,1]^d x {0,1} indexed by sign
codes sigma in {-1,+1}^b, b = q^d:

- a smooth bump psi (plateau c2 on [1/4,3/4]^d, support in [1/8,7/8]^d)
  placed in each of the b grid cells,
- eta_sigma(x) = (1 + sigma_k delta^(1/(1+alpha)) psi(q x - k)) / 2 in cell k,
- marginal mu* with density 2^d b w on plateau subcubes, (1 - bw)/Leb(A0)
  on the null set A0 (where every eta_sigma equals 1/2), zero elsewhere,
- sign codes from a greedy Varshamov-Gilbert construction.

Risks and divergences of the family have closed forms, offered both as
functions and through FamilyDistribution for the generic risk operations.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .bounds_calculus import general_lower_bound
from .core_model import (
    PLATEAU_HI,
    PLATEAU_LO,
    SUPPORT_HI,
    SUPPORT_LO,
    CellGrid,
    CellwiseRegression,
    CellwiseRule,
    Dataset,
    MarginSpec,
    Point,
    PredictionRule,
    Provenance,
    RegressionFn,
    SupportPiece,
    TabulatedRegression,
    ThresholdRule,
)
from .errors import EnumerationTooLargeError, FamilyParameterError, NotCellwiseError
from .margin_calculus import PlateauCells, check_margin_2_15
from .observability import get_logger, trace_function
from .reporting import VerificationReport

logger = get_logger(__name__)

EXHAUSTIVE_MAX_B = 24
MIN_STANDARD_B = 16
FORMAT_VERSION = 1


# ============================================================================
# Bump profile
# ============================================================================

def smooth_ramp(v: np.ndarray) -> np.ndarray:
    """s(v) = e^(-1/v) / (e^(-1/v) + e^(-1/(1-v))), 0 below 0 and 1 above 1"""
    v = np.asarray(v, dtype=float)
    out = np.where(v >= 1.0, 1.0, 0.0)
    inner = (v > 0.0) & (v < 1.0)
    vi = v[inner]
    with np.errstate(over="ignore"):
        out[inner] = 1.0 / (1.0 + np.exp(1.0 / vi - 1.0 / (1.0 - vi)))
    return out


def transition(v: np.ndarray) -> np.ndarray:
    """Per-axis factor: 0 off (1/8,7/8), 1 on [1/4,3/4], smooth ramps between"""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    rising = (v > SUPPORT_LO) & (v < PLATEAU_LO)
    falling = (v > PLATEAU_HI) & (v < SUPPORT_HI)
    out[rising] = smooth_ramp(8.0 * (v[rising] - SUPPORT_LO))
    out[falling] = smooth_ramp(8.0 * (SUPPORT_HI - v[falling]))
    out[(v >= PLATEAU_LO) & (v <= PLATEAU_HI)] = 1.0
    return out


@dataclass(frozen=True)
class BumpProfile:
    c2: float
    d: int = 1

    def __post_init__(self):
        if not 0.0 < self.c2 < 0.5:
            raise FamilyParameterError(f"c2 must lie in (0, 1/2); got {self.c2}")

    support = (SUPPORT_LO, SUPPORT_HI)
    plateau = (PLATEAU_LO, PLATEAU_HI)

    def evaluate(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float).reshape(-1, self.d)
        return self.c2 * np.prod(transition(U), axis=1)


def bump_eval(profile: BumpProfile, u: Point | Sequence[float]) -> float:
    point = u if isinstance(u, Point) else Point(tuple(u))
    if point.d != profile.d:
        raise ValueError(f"expected a point of dimension {profile.d}")
    return float(profile.evaluate(point.as_array())[0])


# ============================================================================
# Sign codes
# ============================================================================

def _ball_offsets(b: int, radius: int, exact: bool = False) -> np.ndarray:
    """XOR masks of weight <= radius (or == radius when exact)"""
    start = radius if exact else 0
    masks = []
    for r in range(start, radius + 1):
        for combo in itertools.combinations(range(b), r):
            masks.append(sum(1 << (b - 1 - j) for j in combo))
    return np.asarray(masks, dtype=np.int64)


def _greedy_exhaustive(b: int, min_hamming: int, chunk: int = 4096) -> np.ndarray:
    size = 1 << b
    blocked = np.zeros(size, dtype=bool)
    offsets = _ball_offsets(b, min_hamming - 1)
    accepted: List[int] = []
    for start in range(0, size, chunk):
        stop = min(size, start + chunk)
        for candidate in np.flatnonzero(~blocked[start:stop]) + start:
            if blocked[candidate]:
                continue
            accepted.append(int(candidate))
            blocked[candidate ^ offsets] = True
    return np.asarray(accepted, dtype=np.int64)


def _ints_to_signs(values: np.ndarray, b: int) -> np.ndarray:
    shifts = np.arange(b - 1, -1, -1, dtype=np.int64)
    bits = (values[:, None] >> shifts[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def _signs_to_ints(codes: np.ndarray) -> np.ndarray:
    b = codes.shape[1]
    weights = 1 << np.arange(b - 1, -1, -1, dtype=np.int64)
    return ((codes > 0).astype(np.int64) * weights).sum(axis=1)


def vg_greedy(
    b: int,
    min_hamming: Optional[int] = None,
    mode: str = "exhaustive",
    budget: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """
    Greedy sign code with pairwise Hamming distance >= min_hamming.

    Args:
        b: Code length
        min_hamming: Required separation, default ceil(b/8)
        mode: "exhaustive" scans all 2^b words in lexicographic order (b <= 24);
            "randomized" draws ``budget`` random candidates
        budget: Candidate count for randomized mode
        seed: Generator seed for randomized mode

    Returns:
        Array of shape (|S|, b) with entries in {-1, +1}; the word -1...-1
        comes first in exhaustive mode
    """
    if b < 1:
        raise FamilyParameterError(f"b must be >= 1; got {b}")
    min_hamming = math.ceil(b / 8) if min_hamming is None else int(min_hamming)
    if min_hamming < 1:
        raise FamilyParameterError("min_hamming must be >= 1")

    if mode == "exhaustive":
        if b > EXHAUSTIVE_MAX_B:
            raise EnumerationTooLargeError()
        return _ints_to_signs(_greedy_exhaustive(b, min_hamming), b)

    if mode == "randomized":
        budget = 4096 if budget is None else int(budget)
        rng = np.random.default_rng(seed)
        kept = np.empty((max(budget, 1), b), dtype=np.int8)
        size = 0
        for _ in range(budget):
            candidate = (2 * rng.integers(0, 2, size=b) - 1).astype(np.int8)
            if size == 0 or np.count_nonzero(kept[:size] != candidate, axis=1).min() >= min_hamming:
                kept[size] = candidate
                size += 1
        logger.info("Randomized code built", b=b, min_hamming=min_hamming, budget=budget, size=size)
        return kept[:size].copy()

    raise ValueError(f"unknown code mode {mode!r}")


def gilbert_varshamov_bound(b: int, min_hamming: int) -> float:
    """2^b / |Hamming ball of radius min_hamming - 1|"""
    volume = sum(math.comb(b, i) for i in range(min_hamming))
    return 2.0 ** b / volume


def hamming_extremes(codes: np.ndarray) -> tuple[int, int]:
    """(min, max) Hamming distance over all pairs of distinct codes"""
    codes = np.asarray(codes)
    count, b = codes.shape
    if count < 2:
        return 0, 0
    if b <= EXHAUSTIVE_MAX_B:
        words = _signs_to_ints(codes)
        member = np.zeros(1 << b, dtype=bool)
        member[words] = True
        full = (1 << b) - 1

        def first_radius(origins: np.ndarray, start: int) -> int:
            for r in range(start, b + 1):
                shell = _ball_offsets(b, r, exact=True)
                block = max(1, (1 << 22) // shell.size)
                for lo in range(0, origins.size, block):
                    if member[origins[lo:lo + block, None] ^ shell[None, :]].any():
                        return r
            return b

        smallest = first_radius(words, 1)
        # farthest pair: closest code to some complement
        largest = b - first_radius(words ^ full, 0)
        return smallest, largest

    smallest, largest = b, 0
    for i in range(count - 1):
        dist = np.count_nonzero(codes[i + 1:] != codes[i], axis=1)
        smallest = min(smallest, int(dist.min()))
        largest = max(largest, int(dist.max()))
    return smallest, largest


# ============================================================================
# Family
# ============================================================================

@dataclass(frozen=True)
class PairwiseStats:
    hamming: int
    l2_eta_sq: float
    l1_bayes: float
    chi2: float
    kl: float


@dataclass(frozen=True, eq=False)
class LowerBoundFamily:
    d: int
    q: int
    delta: float
    alpha: float
    C: float
    c2: float
    codes: np.ndarray
    code_mode: str = "exhaustive"
    min_hamming: int = 1
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int8)
        if codes.ndim != 2 or codes.shape[1] != self.b or codes.shape[0] == 0:
            raise FamilyParameterError(f"codes must form a nonempty (|S|, {self.b}) array")
        if not np.all(np.abs(codes) == 1):
            raise FamilyParameterError("code entries must be -1 or +1")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    # derived constants

    @property
    def b(self) -> int:
        return self.q ** self.d

    @cached_property
    def grid(self) -> CellGrid:
        return CellGrid(self.d, self.q)

    @cached_property
    def profile(self) -> BumpProfile:
        return BumpProfile(self.c2, self.d)

    @property
    def amplitude_scale(self) -> float:
        """delta^(1/(1+alpha))"""
        return self.delta ** (1.0 / (1.0 + self.alpha))

    @property
    def a(self) -> float:
        return self.c2 * self.amplitude_scale

    @property
    def bw(self) -> float:
        return self.C * self.delta ** (self.alpha / (1.0 + self.alpha))

    @property
    def w(self) -> float:
        return self.bw / self.b

    @property
    def excess_unit(self) -> float:
        """a * w = C c2 delta / b, the excess risk of one wrong cell"""
        return self.C * self.c2 * self.delta / self.b

    @property
    def null_volume(self) -> float:
        return 1.0 - (3.0 / 4.0) ** self.d

    @property
    def lambda0(self) -> float:
        return 16.0 ** (-(1.0 + self.alpha) / self.alpha) * self.C * self.c2

    @property
    def margin_constant(self) -> float:
        """C (2/c2)^alpha"""
        return self.C * (2.0 / self.c2) ** self.alpha

    @property
    def code_count(self) -> int:
        return int(self.codes.shape[0])

    @cached_property
    def family_id(self) -> str:
        payload = json.dumps(self._core_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    # evaluation

    def sigma(self, index: int) -> np.ndarray:
        if not 0 <= index < self.code_count:
            raise IndexError(f"code index {index} out of range 0..{self.code_count - 1}")
        return self.codes[index]

    def cell_index(self, x: Point) -> int:
        cells, _ = self.grid.locate(x.as_array())
        return int(cells[0])

    def eta_values(self, X: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        cells, local = self.grid.locate(X)
        psi = self.profile.evaluate(local)
        return 0.5 + 0.5 * sigma[cells] * self.amplitude_scale * psi

    def regression(self, index: int) -> CellwiseRegression:
        return CellwiseRegression(self, index)

    def bayes_labels(self, index: int) -> np.ndarray:
        return (self.sigma(index) > 0).astype(np.int8)

    def bayes_rule(self, index: int) -> CellwiseRule:
        return CellwiseRule(self.grid, tuple(int(v) for v in self.bayes_labels(index)))

    def distribution(self, index: int) -> "FamilyDistribution":
        self.sigma(index)
        return FamilyDistribution(self, index)

    # serialization

    def _core_dict(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "q": self.q,
            "delta": self.delta,
            "alpha": self.alpha,
            "C": self.C,
            "c2": self.c2,
            "code_mode": self.code_mode,
            "min_hamming": self.min_hamming,
            "codes": self.codes.astype(int).tolist(),
        }

    def to_dict(self) -> Dict[str, Any]:
        data = {"format_version": FORMAT_VERSION, "family_id": self.family_id}
        data.update(self._core_dict())
        data["warnings"] = list(self.warnings)
        data["derived"] = {
            "b": self.b,
            "a": self.a,
            "w": self.w,
            "bw": self.bw,
            "null_volume": self.null_volume,
            "lambda0": self.lambda0,
            "C_M": self.margin_constant,
            "excess_unit": self.excess_unit,
            "code_count": self.code_count,
        }
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LowerBoundFamily":
        return cls(
            d=int(data["d"]),
            q=int(data["q"]),
            delta=float(data["delta"]),
            alpha=float(data["alpha"]),
            C=float(data["C"]),
            c2=float(data["c2"]),
            codes=np.asarray(data["codes"], dtype=np.int8),
            code_mode=data.get("code_mode", "exhaustive"),
            min_hamming=int(data.get("min_hamming", 1)),
            warnings=tuple(data.get("warnings", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "LowerBoundFamily":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LowerBoundFamily":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _validate_parameters(d: int, q: int, delta: float, alpha: float, C: float, c2: float) -> None:
    if d not in (1, 2, 3):
        raise FamilyParameterError(f"d must be 1, 2 or 3; got {d}")
    if q < 1:
        raise FamilyParameterError(f"q must be >= 1; got {q}")
    if not 0.0 < delta < 1.0:
        raise FamilyParameterError(f"delta must lie in (0, 1); got {delta}")
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise FamilyParameterError(f"alpha must be positive and finite; got {alpha}")
    if not 0.0 < C <= 1.0:
        raise FamilyParameterError(f"C must lie in (0, 1]; got {C}")
    if not 0.0 < c2 < 0.5:
        raise FamilyParameterError(f"c2 must lie in (0, 1/2); got {c2}")


@trace_function("family build")
def build_family(
    d: int,
    q: int,
    delta: float,
    alpha: float,
    C: float,
    c2: float,
    code_mode: str = "exhaustive",
    min_hamming: Optional[int] = None,
    code_budget: Optional[int] = None,
    code_seed: int = 0,
) -> LowerBoundFamily:
    """Build the family and its sign codes after validating every parameter."""
    _validate_parameters(d, q, delta, alpha, C, c2)
    b = q ** d
    warnings: List[str] = []
    if b < MIN_STANDARD_B:
        warnings.append(f"b = {b} is below {MIN_STANDARD_B}")
        logger.warning("Small family", b=b)
    min_hamming = math.ceil(b / 8) if min_hamming is None else int(min_hamming)
    codes = vg_greedy(b, min_hamming, mode=code_mode, budget=code_budget, seed=code_seed)
    return LowerBoundFamily(
        d=d,
        q=q,
        delta=float(delta),
        alpha=float(alpha),
        C=float(C),
        c2=float(c2),
        codes=codes,
        code_mode=code_mode,
        min_hamming=min_hamming,
        warnings=tuple(warnings),
    )


def eta_sigma(family: LowerBoundFamily, sigma_index: int, x: Point) -> float:
    return float(family.eta_values(x.as_array(), family.sigma(sigma_index))[0])


# ============================================================================
# Distribution view with closed forms
# ============================================================================

@dataclass(frozen=True, eq=False)
class FamilyDistribution:
    """P_sigma of a family, usable by the generic risk and margin operations"""

    family: LowerBoundFamily
    sigma_index: int

    @property
    def dimension(self) -> int:
        return self.family.d

    @cached_property
    def eta(self) -> CellwiseRegression:
        return self.family.regression(self.sigma_index)

    @cached_property
    def bayes_labels(self) -> np.ndarray:
        return self.family.bayes_labels(self.sigma_index)

    def support_pieces(self) -> Sequence[SupportPiece]:
        fam = self.family
        grid = fam.grid
        corners = grid.corners(np.arange(fam.b))
        plateau_density = (2.0 * fam.q) ** fam.d * fam.w
        null_density = (1.0 - fam.bw) / fam.null_volume

        def outside_support(X: np.ndarray) -> np.ndarray:
            return ~grid.in_support(grid.locate(X)[1])

        pieces = [
            SupportPiece(
                tuple(corner + PLATEAU_LO / fam.q), tuple(corner + PLATEAU_HI / fam.q), plateau_density
            )
            for corner in corners
        ]
        pieces += [
            SupportPiece(tuple(corner), tuple(corner + 1.0 / fam.q), null_density, outside_support)
            for corner in corners
        ]
        return pieces

    def _labels_of(self, rule: PredictionRule) -> Optional[np.ndarray]:
        if isinstance(rule, CellwiseRule) and rule.grid == self.family.grid:
            return rule.label_array
        return None

    def exact_excess(self, rule: PredictionRule) -> Optional[float]:
        labels = self._labels_of(rule)
        if labels is not None:
            return self.family.excess_unit * int(np.count_nonzero(labels != self.bayes_labels))
        if isinstance(rule, ThresholdRule):
            eta = rule.eta
            if isinstance(eta, CellwiseRegression) and eta.family.family_id == self.family.family_id:
                wrong = np.count_nonzero(eta.bayes_labels() != self.bayes_labels)
                return self.family.excess_unit * int(wrong)
            if isinstance(eta, TabulatedRegression) and eta.dimension == self.family.d:
                return self._tabulated_excess(eta)
        return None

    def _tabulated_excess(self, eta: TabulatedRegression) -> float:
        fam = self.family
        k, h = eta.cells_per_axis, eta.step
        lo_edges = np.arange(k) * h
        hi_edges = lo_edges + h
        hi_edges[-1] = np.inf
        starts = np.arange(fam.q) / fam.q
        overlap = np.clip(
            np.minimum((starts + PLATEAU_HI / fam.q)[:, None], hi_edges[None, :])
            - np.maximum((starts + PLATEAU_LO / fam.q)[:, None], lo_edges[None, :]),
            0.0,
            None,
        )
        volume_one = (eta.values >= 0.5).astype(float)
        for axis in range(fam.d):
            volume_one = np.moveaxis(np.tensordot(overlap, volume_one, axes=([1], [axis])), 0, axis)
        volume_one = volume_one.reshape(-1)
        plateau_volume = (0.5 / fam.q) ** fam.d
        wrong = np.where(self.bayes_labels == 1, plateau_volume - volume_one, volume_one)
        wrong = np.where(np.abs(wrong) <= 1e-12 * plateau_volume, 0.0, wrong)
        return float(fam.excess_unit * wrong.sum() / plateau_volume)

    def exact_l1(self, f: PredictionRule, g: PredictionRule, exclude_zero_margin: bool) -> Optional[float]:
        lf, lg = self._labels_of(f), self._labels_of(g)
        if lf is None or lg is None:
            return None
        value = 2.0 * self.family.w * int(np.count_nonzero(lf != lg))
        if not exclude_zero_margin and f.default_label != g.default_label:  # type: ignore[attr-defined]
            value += 2.0 * (1.0 - self.family.bw)
        return value

    def margin_mass(self, t: float) -> float:
        return self.family.bw if self.family.a <= 2.0 * t else 0.0

    def exact_set_stats(self, descriptor: Any) -> Optional[tuple[float, float]]:
        if not isinstance(descriptor, PlateauCells):
            return None
        if any(not 0 <= k < self.family.b for k in descriptor.cells):
            raise ValueError("plateau cell index out of range")
        count = len(descriptor.cells)
        return count * self.family.excess_unit, count * self.family.w

    def exact_sup_distance(self, eta_bar: RegressionFn) -> Optional[float]:
        if isinstance(eta_bar, CellwiseRegression) and eta_bar.family.family_id == self.family.family_id:
            differs = np.any(eta_bar.sigma != self.eta.sigma)
            return self.family.a if differs else 0.0
        return None


# ============================================================================
# Sampling
# ============================================================================

@dataclass(frozen=True)
class NullDraw:
    points: np.ndarray
    drawn: int
    accepted: int


def sample_null_set(family: LowerBoundFamily, count: int, rng: np.random.Generator) -> NullDraw:
    """Uniform points on A0 by rejection from the unit cube"""
    d = family.d
    out = np.empty((count, d))
    filled = drawn = accepted = 0
    while filled < count:
        need = count - filled
        batch = max(16, math.ceil(1.2 * need / family.null_volume))
        U = rng.random((batch, d))
        ok = ~CellGrid.in_support(family.grid.locate(U)[1])
        hits = U[ok]
        drawn += batch
        accepted += hits.shape[0]
        take = hits[:need]
        out[filled:filled + take.shape[0]] = take
        filled += take.shape[0]
    return NullDraw(out, drawn, accepted)


def sample_dataset(family: LowerBoundFamily, sigma_index: int, n: int, seed: int) -> Dataset:
    """n i.i.d. draws from P_sigma; the stream is a function of the seed alone."""
    if n < 1:
        raise ValueError(f"n must be >= 1; got {n}")
    sigma = family.sigma(sigma_index)
    rng = np.random.default_rng(seed)
    on_plateau = rng.random(n) < family.bw
    n_plateau = int(on_plateau.sum())
    X = np.empty((n, family.d))
    cells = rng.integers(0, family.b, size=n_plateau)
    offsets = rng.uniform(PLATEAU_LO, PLATEAU_HI, size=(n_plateau, family.d))
    X[on_plateau] = family.grid.corners(cells) + offsets / family.q
    X[~on_plateau] = sample_null_set(family, n - n_plateau, rng).points
    y = (rng.random(n) < family.eta_values(X, sigma)).astype(np.int8)
    return Dataset(X, y, Provenance(family.family_id, sigma_index, int(seed)))


# ============================================================================
# Closed forms
# ============================================================================

def exact_bayes_risk(family: LowerBoundFamily) -> float:
    return 0.5 - 0.5 * family.C * family.c2 * family.delta


def exact_excess_cellwise(family: LowerBoundFamily, sigma_index: int, rule: PredictionRule) -> float:
    if not isinstance(rule, CellwiseRule) or rule.grid != family.grid:
        raise NotCellwiseError()
    wrong = np.count_nonzero(rule.label_array != family.bayes_labels(sigma_index))
    return family.excess_unit * int(wrong)


def pairwise_stats(family: LowerBoundFamily, i: int, j: int) -> PairwiseStats:
    H = int(np.count_nonzero(family.sigma(i) != family.sigma(j)))
    return _stats_for_hamming(family, H)


def _stats_for_hamming(family: LowerBoundFamily, H: int) -> PairwiseStats:
    a, w = family.a, family.w
    return PairwiseStats(
        hamming=H,
        l2_eta_sq=H * w * a * a,
        l1_bayes=2.0 * H * w,
        chi2=H * w * a * a * 4.0 / (1.0 - a * a),
        kl=H * w * a * math.log((1.0 + a) / (1.0 - a)),
    )


def separation_constants(family: LowerBoundFamily) -> tuple[float, float]:
    """(gamma^2, s): pairwise L2 bound C delta^((2+a)/(1+a)) and L1 separation (C/4) delta^(a/(1+a))"""
    alpha = family.alpha
    gamma_sq = family.C * family.delta ** ((2.0 + alpha) / (1.0 + alpha))
    s = 0.25 * family.C * family.delta ** (alpha / (1.0 + alpha))
    return gamma_sq, s


def minimax_lower_bound(family: LowerBoundFamily, n: int) -> float:
    """Lower bound on max_sigma P_sigma(||f_hat - f*_sigma||_1 >= s/2) for any estimator"""
    gamma_sq, _ = separation_constants(family)
    return general_lower_bound(family.code_count, n, gamma_sq)


def delta_for_level(lam: float, alpha: float, C: float, c2: float) -> float:
    """delta with lambda0(alpha, C, c2) * delta = lam"""
    lambda0 = 16.0 ** (-(1.0 + alpha) / alpha) * C * c2
    delta = lam / lambda0
    if not 0.0 < delta < 1.0:
        raise FamilyParameterError(f"level {lam} needs delta = {delta}, outside (0, 1)")
    return delta


def holder_q(delta: float, alpha: float, beta: float, c5: float) -> int:
    if min(delta, alpha, beta, c5) <= 0:
        raise FamilyParameterError("holder_q needs positive delta, alpha, beta and c5")
    exponent = 0.0 if math.isinf(beta) or math.isinf(alpha) else -1.0 / ((1.0 + alpha) * beta)
    return max(1, math.ceil(c5 * delta ** exponent))


def maximal_separation_subset(family: LowerBoundFamily, size: int = 10) -> List[int]:
    """Farthest-point selection of code indices, starting at code 0"""
    codes = family.codes
    size = min(size, family.code_count)
    chosen = [0]
    nearest = np.count_nonzero(codes != codes[0], axis=1)
    while len(chosen) < size:
        candidates = nearest.copy()
        candidates[chosen] = -1
        nxt = int(np.argmax(candidates))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.count_nonzero(codes != codes[nxt], axis=1))
    return chosen


# ============================================================================
# Verification
# ============================================================================

def _dense_grid(d: int, q: int, max_points: int = 1_000_000) -> np.ndarray:
    per_axis = min(64 * q, int(max_points ** (1.0 / d)))
    axis = (np.arange(per_axis) + 0.5) / per_axis
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def holder_seminorm(
    fn: RegressionFn,
    d: int,
    beta: float,
    pairs: int,
    rng: np.random.Generator,
    q: int = 1,
    min_scale: float = 1e-4,
) -> float:
    """
    Largest |fn(x) - fn(y)| / |x - y|^beta over random pairs.

    Anchors are uniform on the support cubes (1/8, 7/8)^d of the cells of a
    q-grid, so the null set is never an anchor; partners sit at log-uniform
    distances from min_scale / q up to two cell widths, which reaches the
    support of every adjacent cell.
    """
    cells = rng.integers(0, q, size=(pairs, d))
    local = rng.uniform(SUPPORT_LO, SUPPORT_HI, size=(pairs, d))
    X = (cells + local) / q
    direction = rng.normal(size=(pairs, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = np.exp(rng.uniform(math.log(min_scale / q), math.log(2.0 / q), size=pairs))
    Y = np.clip(X + radius[:, None] * direction, 0.0, 1.0)
    gap = np.linalg.norm(X - Y, axis=1)
    keep = gap > 0
    diff = np.abs(fn.evaluate(X[keep]) - fn.evaluate(Y[keep]))
    return float(np.max(diff / gap[keep] ** beta)) if keep.any() else 0.0


def verify_family(
    family: LowerBoundFamily,
    target_margin: Optional[MarginSpec] = None,
    holder: Optional[Dict[str, float]] = None,
    t_points: int = 100,
    holder_pairs: int = 20_000,
    seed: int = 0,
) -> VerificationReport:
    """
    Check the construction requirements of a family.

    Args:
        family: Family to check
        target_margin: Margin parameters to validate against; default
            MarginSpec(alpha, C (2/c2)^alpha)
        holder: Optional {"beta", "L"}; the seminorm is checked for beta <= 1
            and only the scaling factor q^beta delta^(1/(1+alpha)) is reported otherwise
        t_points: Size of the t-grid for the margin check
        holder_pairs: Random pairs per code for the seminorm estimate
        seed: Seed for the seminorm pair sampler

    Returns:
        VerificationReport; failures are listed, never raised
    """
    target = target_margin or MarginSpec(family.alpha, family.margin_constant)
    report = VerificationReport(
        "lower-bound family",
        {"family_id": family.family_id, "C_M": family.margin_constant, "target_C_M": target.C_M},
    )
    probe = maximal_separation_subset(family, min(family.code_count, 4))

    grid_points = _dense_grid(family.d, family.q)
    spread = max(
        float(np.max(np.abs(family.eta_values(grid_points, family.sigma(i)) - 0.5))) for i in probe
    )
    report.add_check("eta_range", spread, 0.25, spread <= 0.25, "max |eta - 1/2| on a dense grid")

    required = math.ceil(family.b / 8)
    if family.code_count >= 2:
        h_min, h_max = hamming_extremes(family.codes)
        report.add_check("code_separation", h_min, required, h_min >= required, "min pairwise Hamming")
    else:
        h_min = h_max = family.b
        report.add_check("code_separation", 0, required, None, "single code")
    size_bound = 2.0 ** (family.b / 8)
    report.add_check(
        "code_size",
        family.code_count,
        size_bound,
        family.code_count >= size_bound if family.code_mode == "exhaustive" else None,
        f"{family.code_mode} mode",
    )

    gamma_sq, s = separation_constants(family)
    far, near = _stats_for_hamming(family, h_max), _stats_for_hamming(family, h_min)
    report.add_check("pair_l2_bound", far.l2_eta_sq, gamma_sq, far.l2_eta_sq <= gamma_sq * (1 + 1e-12))
    report.add_check("pair_l1_bound", near.l1_bayes, s, near.l1_bayes >= s * (1 - 1e-12))
    report.add_check("chi2_vs_l2", far.chi2, 8.0 * far.l2_eta_sq, far.chi2 <= 8.0 * far.l2_eta_sq)
    report.add_check("kl_vs_chi2", far.kl, far.chi2 / 2.0, far.kl <= far.chi2 / 2.0)

    report.add_check(
        "margin_constant",
        family.margin_constant,
        target.C_M,
        family.margin_constant <= target.C_M * (1 + 1e-12),
        "C (2/c2)^alpha against target C_M",
    )
    t_grid = list(np.linspace(0.005, 0.995, t_points))
    margin = check_margin_2_15(family.distribution(0), family.alpha, target.C_M, t_grid)
    report.add_check("margin_2_15", margin.worst_ratio, 1.0, margin.verdict, f"{t_points}-point t-grid")

    if holder is not None:
        beta, L = float(holder["beta"]), float(holder["L"])
        scale = family.q ** beta * family.amplitude_scale
        if beta <= 1.0:
            rng = np.random.default_rng(seed)
            seminorm = max(
                holder_seminorm(family.regression(i), family.d, beta, holder_pairs, rng, q=family.q) for i in probe
            )
            report.add_check("holder_seminorm", seminorm, L, seminorm <= L, f"beta = {beta}")
        else:
            report.add_check(
                "holder_scaling", scale, L, None, "q^beta delta^(1/(1+alpha)) times the bump constant"
            )

    logger.info("Family verified", family_id=family.family_id, verdict=report.verdict)
    return report
