"""
Classifiers
===========

The two trainable procedures and the dictionaries they search:

- net ERM: empirical risk minimization over the plug-in rules of an
  epsilon-net of regression functions (Hölder lattices or family codes)
- class ERM: empirical risk minimization over an explicit list of rules, or
  over every cellwise labelling of a grid (solved cell by cell)
- covering numbers of finite classes and entropy of Hölder nets

Every search breaks ties by the smallest member index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from .core_model import (
    TIE_LABEL,
    CellGrid,
    CellwiseRegression,
    CellwiseRule,
    Dataset,
    PredictionRule,
    RegressionFn,
    TabulatedRegression,
    as_points,
    bayes_rule,
    empirical_risk,
)
from .errors import EmptySampleError, EnumerationTooLargeError, UnsupportedNetError
from .observability import get_logger, trace_function

logger = get_logger(__name__)

DEFAULT_MEMBER_BUDGET = 200_000
EXACT_COVER_MAX = 20
JUMP_SLACK = 1e-12


# ============================================================================
# Hölder lattices
# ============================================================================

@dataclass(frozen=True)
class HolderLattice:
    """
    Piecewise-constant functions on k^d cubes of side 1/k with values on the
    level set {0, eps/2, eps, ..., 1}; values of adjacent cubes may differ by
    at most L h^beta + eps.

    Members are ordered lexicographically by level index, cubes in row-major
    order, the first cube most significant.
    """

    d: int
    beta: float
    L: float
    epsilon: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1; got {self.d}")
        if not 0.0 < self.beta:
            raise ValueError(f"beta must be positive; got {self.beta}")
        if self.beta > 1.0:
            raise UnsupportedNetError()
        if self.L < 0:
            raise ValueError(f"L must be nonnegative; got {self.L}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1); got {self.epsilon}")

    @cached_property
    def cells_per_axis(self) -> int:
        if self.L == 0:
            return 1
        h = (self.epsilon / (2.0 * self.L)) ** (1.0 / self.beta)
        if self.d > 1:
            h /= math.sqrt(self.d)
        return max(1, math.ceil(1.0 / h - 1e-9))

    @property
    def step(self) -> float:
        return 1.0 / self.cells_per_axis

    @property
    def cell_count(self) -> int:
        return self.cells_per_axis ** self.d

    @cached_property
    def levels(self) -> np.ndarray:
        count = math.floor(2.0 / self.epsilon + 1e-9)
        levels = np.minimum(np.arange(count + 1) * (self.epsilon / 2.0), 1.0)
        if levels[-1] < 1.0 - 1e-9:
            levels = np.append(levels, 1.0)
        else:
            levels[-1] = 1.0
        return levels

    @cached_property
    def allowed(self) -> np.ndarray:
        """allowed[u, v]: level u may sit next to level v"""
        jump = self.L * self.step ** self.beta + self.epsilon + JUMP_SLACK
        return np.abs(self.levels[:, None] - self.levels[None, :]) <= jump

    def _neighbours_before(self, cell: int) -> List[int]:
        k = self.cells_per_axis
        idx = np.unravel_index(cell, (k,) * self.d)
        return [cell - k ** (self.d - 1 - axis) for axis in range(self.d) if idx[axis] > 0]

    def log_cardinality(self, budget: int = DEFAULT_MEMBER_BUDGET) -> float:
        """ln |N|: transfer-matrix count in d = 1, enumeration otherwise"""
        if self.d == 1:
            A = self.allowed.astype(float)
            v = np.ones(len(self.levels))
            log_total = 0.0
            for _ in range(self.cells_per_axis - 1):
                v = A @ v
                top = float(v.max())
                v /= top
                log_total += math.log(top)
            return log_total + math.log(float(v.sum()))
        return math.log(self.enumerate(budget).shape[0])

    def enumerate(self, budget: int = DEFAULT_MEMBER_BUDGET) -> np.ndarray:
        """Level indices of every member, shape (|N|, k^d), lexicographic order"""
        count = len(self.levels)
        frontier = np.arange(count, dtype=np.int16)[:, None]
        for cell in range(1, self.cell_count):
            rows = np.repeat(frontier, count, axis=0)
            new = np.tile(np.arange(count, dtype=np.int16), frontier.shape[0])
            ok = np.ones(rows.shape[0], dtype=bool)
            for nb in self._neighbours_before(cell):
                ok &= self.allowed[rows[:, nb], new]
            frontier = np.concatenate([rows[ok], new[ok, None]], axis=1)
            if frontier.shape[0] > budget:
                raise EnumerationTooLargeError()
        return frontier

    def member(self, level_indices: Sequence[int] | np.ndarray) -> TabulatedRegression:
        values = self.levels[np.asarray(level_indices, dtype=np.int64)]
        return TabulatedRegression(values.reshape((self.cells_per_axis,) * self.d), self.step)


# ============================================================================
# Dictionaries and rule classes
# ============================================================================

@dataclass(frozen=True, eq=False)
class NetDictionary:
    """
    Ordered epsilon-net of regression functions.

    A d = 1 Hölder net too large to materialize keeps ``members`` empty and is
    searched through its ``lattice`` instead.
    """

    members: tuple[RegressionFn, ...]
    epsilon: float
    meta: Dict[str, Any] = field(default_factory=dict)
    lattice: Optional[HolderLattice] = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members and self.lattice is None:
            raise ValueError("a net needs at least one member")

    @property
    def implicit(self) -> bool:
        return not self.members

    @property
    def dimension(self) -> int:
        return self.lattice.d if self.implicit else self.members[0].dimension  # type: ignore[union-attr]

    def __len__(self) -> int:
        return len(self.members)

    def log_size(self) -> float:
        if self.implicit:
            return self.lattice.log_cardinality()  # type: ignore[union-attr]
        return math.log(len(self.members))


@dataclass(frozen=True, eq=False)
class RuleClass:
    """Explicit nonempty list of rules, or every cellwise labelling of a grid
    together with the label of the region outside the support cubes."""

    rules: tuple[PredictionRule, ...] = ()
    grid: Optional[CellGrid] = None

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.grid is None and not self.rules:
            raise ValueError("a rule class needs at least one rule")
        if self.grid is not None and self.rules:
            raise ValueError("a rule class is either explicit or a product, not both")

    @classmethod
    def explicit(cls, rules: Sequence[PredictionRule]) -> "RuleClass":
        return cls(rules=tuple(rules))

    @classmethod
    def cellwise(cls, grid_or_family: Any) -> "RuleClass":
        grid = grid_or_family if isinstance(grid_or_family, CellGrid) else grid_or_family.grid
        return cls(grid=grid)

    @property
    def is_product(self) -> bool:
        return self.grid is not None

    @property
    def size(self) -> int:
        return 2 ** (self.grid.b + 1) if self.grid is not None else len(self.rules)


# ============================================================================
# Net construction
# ============================================================================

@trace_function("holder net build")
def build_holder_net(
    d: int, beta: float, L: float, epsilon: float, max_members: int = DEFAULT_MEMBER_BUDGET
) -> NetDictionary:
    """
    Build an epsilon-net in sup-norm of the [0,1]-valued Hölder(beta, L) class.

    Args:
        d: Dimension
        beta: Smoothness in (0, 1]
        L: Hölder constant (0 gives the constants)
        epsilon: Radius in (0, 1)
        max_members: Materialization budget; a larger d = 1 net stays implicit

    Returns:
        NetDictionary of TabulatedRegression members
    """
    lattice = HolderLattice(d, beta, L, epsilon)
    meta = {
        "kind": "holder",
        "d": d,
        "beta": beta,
        "L": L,
        "cells_per_axis": lattice.cells_per_axis,
        "levels": len(lattice.levels),
    }
    if d == 1:
        log_size = lattice.log_cardinality()
        meta["log_cardinality"] = log_size
        if log_size > math.log(max_members):
            logger.info("Holder net kept implicit", log_cardinality=log_size, epsilon=epsilon)
            return NetDictionary((), epsilon, meta, lattice)
    indices = lattice.enumerate(max_members)
    members = tuple(lattice.member(row) for row in indices)
    meta["log_cardinality"] = math.log(len(members))
    return NetDictionary(members, epsilon, meta, lattice)


def family_code_net(family: Any, sigma_indices: Optional[Sequence[int]] = None) -> NetDictionary:
    """The regression functions eta_sigma' of a family, in code order"""
    indices = range(family.code_count) if sigma_indices is None else sigma_indices
    members = tuple(family.regression(int(i)) for i in indices)
    return NetDictionary(members, 0.0, {"kind": "codes", "family_id": family.family_id})


def epsilon_schedule(n: int, alpha: float, r: float) -> float:
    """n^(-1/(2+alpha+r))"""
    if n < 1:
        raise ValueError(f"n must be >= 1; got {n}")
    if not (alpha > 0 and r > 0):
        raise ValueError("epsilon_schedule needs alpha > 0 and r > 0")
    if math.isinf(r):
        logger.warning("Degenerate epsilon schedule", n=n, r=r)
        return 1.0
    return float(n) ** (-1.0 / (2.0 + alpha + r))


@dataclass(frozen=True)
class NetEntropy:
    epsilons: tuple[float, ...]
    log_sizes: tuple[float, ...]
    exponent: float


def holder_net_entropy(
    d: int, beta: float, L: float, eps_grid: Sequence[float], budget: int = DEFAULT_MEMBER_BUDGET
) -> NetEntropy:
    """ln |N_eps| over a grid and the slope of ln ln |N_eps| against ln(1/eps)"""
    if len(eps_grid) < 2:
        raise ValueError("need at least two radii")
    sizes = [HolderLattice(d, beta, L, eps).log_cardinality(budget) for eps in eps_grid]
    if min(sizes) <= 0:
        raise ValueError("entropy exponent needs nets with more than one member")
    fit = linregress(np.log(1.0 / np.asarray(eps_grid)), np.log(sizes))
    return NetEntropy(tuple(float(e) for e in eps_grid), tuple(sizes), float(fit.slope))


# ============================================================================
# Empirical risk minimization
# ============================================================================

def _cell_counts(labels_index: np.ndarray, y: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    ones = np.bincount(labels_index, weights=y, minlength=size)
    total = np.bincount(labels_index, minlength=size).astype(float)
    return ones, total


def _cellwise_errors(grid: CellGrid, label_matrix: np.ndarray, D: Dataset, default_label: int) -> np.ndarray:
    """Training errors of many CellwiseRules sharing a grid, one per row of label_matrix"""
    cells, local = grid.locate(D.X)
    inside = grid.in_support(local)
    y = D.y.astype(float)
    ones, total = _cell_counts(cells[inside], y[inside], grid.b)
    outside_ones = float(y[~inside].sum())
    outside_errors = outside_ones if default_label == 0 else float((~inside).sum()) - outside_ones
    return label_matrix @ (total - 2.0 * ones) + ones.sum() + outside_errors


def _table_errors(template: TabulatedRegression, tables: np.ndarray, D: Dataset) -> np.ndarray:
    """Training errors of the plug-in rules of tabulated functions sharing a grid"""
    idx = template.cell_indices(D.X)
    flat = np.ravel_multi_index(tuple(idx.T), template.values.shape)
    ones, total = _cell_counts(flat, D.y.astype(float), template.values.size)
    labels = (tables.reshape(tables.shape[0], -1) >= 0.5).astype(float)
    return labels @ (total - 2.0 * ones) + ones.sum()


def _lattice_erm(lattice: HolderLattice, D: Dataset) -> TabulatedRegression:
    """Lexicographically first member of a d = 1 lattice with minimal training error"""
    k = lattice.cells_per_axis
    template = TabulatedRegression(np.zeros(k), lattice.step)
    idx = template.cell_indices(D.X)[:, 0]
    ones, total = _cell_counts(idx, D.y.astype(float), k)
    label_one = lattice.levels >= 0.5
    cost = np.where(label_one[None, :], (total - ones)[:, None], ones[:, None])

    # cost-to-go from cell i onwards, given the level of cell i
    to_go = np.empty_like(cost)
    to_go[-1] = cost[-1]
    for i in range(k - 2, -1, -1):
        to_go[i] = cost[i] + np.where(lattice.allowed, to_go[i + 1][None, :], np.inf).min(axis=1)

    path = [int(np.argmin(to_go[0]))]
    for i in range(1, k):
        options = np.where(lattice.allowed[path[-1]], to_go[i], np.inf)
        path.append(int(np.argmin(options)))
    return lattice.member(path)


def _same_family_cellwise(members: Sequence[RegressionFn]) -> bool:
    first = members[0]
    return isinstance(first, CellwiseRegression) and all(
        isinstance(m, CellwiseRegression) and m.family.family_id == first.family.family_id for m in members
    )


def _same_table_grid(members: Sequence[RegressionFn]) -> bool:
    first = members[0]
    return isinstance(first, TabulatedRegression) and all(
        isinstance(m, TabulatedRegression) and m.step == first.step and m.values.shape == first.values.shape
        for m in members
    )


def net_erm(net: NetDictionary, D: Dataset) -> PredictionRule:
    """
    Plug-in rule of the net member with the smallest training error.

    Members inducing the same rule share a risk, so the smallest index among
    them is reported.
    """
    if D.n == 0:
        raise EmptySampleError()
    if net.implicit:
        if net.lattice is None or net.lattice.d != 1:
            raise EnumerationTooLargeError()
        return bayes_rule(_lattice_erm(net.lattice, D))

    members = net.members
    if _same_family_cellwise(members):
        family = members[0].family  # type: ignore[attr-defined]
        labels = np.stack([m.bayes_labels() for m in members]).astype(float)  # type: ignore[attr-defined]
        errors = _cellwise_errors(family.grid, labels, D, TIE_LABEL)
        return bayes_rule(members[int(np.argmin(errors))])

    if _same_table_grid(members):
        tables = np.stack([m.values for m in members])  # type: ignore[attr-defined]
        errors = _table_errors(members[0], tables, D)  # type: ignore[arg-type]
        return bayes_rule(members[int(np.argmin(errors))])

    best_index, best_risk = 0, None
    seen: set[bytes] = set()
    for index, member in enumerate(members):
        key = member.rule_key()
        if key is not None:
            if key in seen:
                continue
            seen.add(key)
        risk = empirical_risk(bayes_rule(member), D)
        if best_risk is None or risk < best_risk:
            best_index, best_risk = index, risk
    return bayes_rule(members[best_index])


def majority_label(ones: float, total: float) -> int:
    """1 unless the zeros are a strict majority"""
    return 1 if 2.0 * ones >= total else 0


def class_erm(rules: RuleClass, D: Dataset) -> PredictionRule:
    """
    Rule of the class with the smallest training error.

    A product class is solved cell by cell: each cell takes the majority label
    of the samples in its support cube, the outside region the majority label
    of the remaining samples; ties and empty cells give 1.
    """
    if D.n == 0:
        raise EmptySampleError()
    if rules.grid is not None:
        grid = rules.grid
        if D.d != grid.d:
            raise ValueError(f"dataset dimension {D.d} does not match the grid dimension {grid.d}")
        cells, local = grid.locate(D.X)
        inside = grid.in_support(local)
        y = D.y.astype(float)
        ones, total = _cell_counts(cells[inside], y[inside], grid.b)
        labels = np.where(2.0 * ones >= total, 1, 0)
        default = majority_label(float(y[~inside].sum()), float((~inside).sum()))
        return CellwiseRule(grid, tuple(int(v) for v in labels), default)

    risks = [empirical_risk(rule, D) for rule in rules.rules]
    best = min(range(len(risks)), key=lambda i: (risks[i], i))
    return rules.rules[best]


# ============================================================================
# Covering numbers
# ============================================================================

def _distance_matrix(members: Sequence[Any], distance: Callable[[Any, Any], float] | np.ndarray) -> np.ndarray:
    if isinstance(distance, np.ndarray):
        matrix = np.asarray(distance, dtype=float)
        if matrix.shape != (len(members), len(members)):
            raise ValueError("distance matrix does not match the class size")
        return matrix
    size = len(members)
    matrix = np.zeros((size, size))
    for i, j in itertools.combinations(range(size), 2):
        matrix[i, j] = matrix[j, i] = float(distance(members[i], members[j]))
    return matrix


def covering_number_finite(
    members: Sequence[Any],
    distance: Callable[[Any, Any], float] | np.ndarray,
    epsilon: float,
    exact: bool = False,
) -> int:
    """
    Size of a cover of a finite class by closed epsilon-balls centred at members.

    Args:
        members: Finite class
        distance: Pairwise distance function, or the precomputed matrix
        epsilon: Ball radius (>= 0)
        exact: Minimum cover by subset search (class size <= 20) instead of
            the greedy upper bound

    Returns:
        Number of balls
    """
    if not members:
        return 0
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    covers = _distance_matrix(members, distance) <= epsilon
    size = covers.shape[0]

    if exact:
        if size > EXACT_COVER_MAX:
            raise EnumerationTooLargeError()
        masks = [sum(1 << j for j in np.flatnonzero(row)) for row in covers]
        full = (1 << size) - 1
        for k in range(1, size + 1):
            for combo in itertools.combinations(range(size), k):
                union = 0
                for i in combo:
                    union |= masks[i]
                if union == full:
                    return k
        return size

    uncovered = np.ones(size, dtype=bool)
    count = 0
    while uncovered.any():
        gains = (covers & uncovered[None, :]).sum(axis=1)
        uncovered &= ~covers[int(np.argmax(gains))]
        count += 1
    return count


def net_sup_distance(net: NetDictionary, fn: RegressionFn, resolution: int = 2000) -> float:
    """Smallest sup-distance from fn to a net member, on a midpoint grid"""
    d = net.dimension
    per_axis = max(2, int(round(resolution ** (1.0 / d))))
    axis = (np.arange(per_axis) + 0.5) / per_axis
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    X = np.stack([m.reshape(-1) for m in mesh], axis=1)
    target = fn.evaluate(X)

    if net.implicit:
        lattice = net.lattice
        assert lattice is not None and lattice.d == 1
        k = lattice.cells_per_axis
        cells = TabulatedRegression(np.zeros(k), lattice.step).cell_indices(X)[:, 0]
        gap = np.abs(lattice.levels[None, :] - target[:, None])
        cost = np.full((k, len(lattice.levels)), 0.0)
        np.maximum.at(cost, cells, gap)
        # minimax over lattice paths
        to_go = cost[-1].copy()
        for i in range(k - 2, -1, -1):
            to_go = np.maximum(cost[i], np.where(lattice.allowed, to_go[None, :], np.inf).min(axis=1))
        return float(to_go.min())

    return min(float(np.max(np.abs(m.evaluate(as_points(X, d)) - target))) for m in net.members)
