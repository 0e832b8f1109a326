"""
Core Model
==========

Domain types shared by every module (points, samples, regression functions,
prediction rules, margin parameters, distributions) and the elementary risk
operations: Bayes rule, empirical risk, excess risk as a disagreement integral
and L1 disagreement between rules.

Points live in the unit cube [0,1]^d. All array-valued evaluations take an
``(m, d)`` float array and return an ``(m,)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Iterable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import EmptySampleError, UnsupportedDistributionError

SUPPORT_LO, SUPPORT_HI = 0.125, 0.875
PLATEAU_LO, PLATEAU_HI = 0.25, 0.75

# eta(x) == 1/2 is labelled 1
TIE_LABEL = 1

DEFAULT_RESOLUTION = {1: 10_000, 2: 200, 3: 40}


def default_resolution(d: int) -> int:
    return DEFAULT_RESOLUTION.get(d, 16)


def as_points(X: np.ndarray | Sequence[Sequence[float]], d: Optional[int] = None) -> np.ndarray:
    """Coerce input to an (m, d) float array"""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d in (None, 1) else arr.reshape(-1, d)
    return arr


# ============================================================================
# Samples
# ============================================================================

@dataclass(frozen=True)
class Point:
    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if not coords:
            raise ValueError("point must have dimension >= 1")
        if any(not (0.0 <= c <= 1.0) for c in coords):
            raise ValueError(f"point outside [0,1]^d: {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def d(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float).reshape(1, -1)


@dataclass(frozen=True)
class LabeledSample:
    x: Point
    y: int

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y!r}")


@dataclass(frozen=True)
class Provenance:
    family_id: str = "adhoc"
    code_index: int = -1
    seed: int = -1


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered labelled sample stored as read-only arrays.

    ``X`` has shape (n, d) and ``y`` shape (n,). Generation order is kept;
    estimators built on top of a Dataset must not depend on it.
    """

    X: np.ndarray
    y: np.ndarray
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y_raw = np.asarray(self.y)
        if X.shape[0] == 0:
            raise EmptySampleError()
        if X.ndim != 2 or y_raw.shape != (X.shape[0],):
            raise ValueError(f"inconsistent sample shapes {X.shape} and {y_raw.shape}")
        if not np.all((X >= 0.0) & (X <= 1.0)):
            raise ValueError("sample points must lie in [0,1]^d")
        if not np.all((y_raw == 0) | (y_raw == 1)):
            raise ValueError("labels must be 0 or 1")
        y = y_raw.astype(np.int8)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(
        cls, samples: Iterable[LabeledSample], provenance: Optional[Provenance] = None
    ) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise EmptySampleError()
        X = np.array([s.x.coords for s in samples], dtype=float)
        y = np.array([s.y for s in samples], dtype=np.int8)
        return cls(X, y, provenance or Provenance())

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    def __len__(self) -> int:
        return self.n

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(Point(tuple(x)), int(y)) for x, y in zip(self.X, self.y)]

    def permuted(self, order: Sequence[int] | np.ndarray) -> "Dataset":
        order = np.asarray(order)
        return Dataset(self.X[order], self.y[order], self.provenance)


# ============================================================================
# Cell geometry
# ============================================================================

@dataclass(frozen=True)
class CellGrid:
    """Regular partition of [0,1]^d into q^d cubes, numbered in row-major order."""

    d: int
    q: int

    def __post_init__(self):
        if self.d < 1 or self.q < 1:
            raise ValueError("grid needs d >= 1 and q >= 1")

    @property
    def b(self) -> int:
        return self.q ** self.d

    def locate(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (cell index, local coordinates in [0,1]^d) for each row of X."""
        scaled = as_points(X, self.d) * self.q
        corner = np.clip(np.floor(scaled), 0, self.q - 1)
        local = scaled - corner
        cells = np.zeros(scaled.shape[0], dtype=np.int64)
        for j in range(self.d):
            cells = cells * self.q + corner[:, j].astype(np.int64)
        return cells, local

    def corners(self, cells: np.ndarray) -> np.ndarray:
        """Lower corner of each cell, shape (m, d)"""
        idx = np.unravel_index(np.asarray(cells, dtype=np.int64), (self.q,) * self.d)
        return np.stack(idx, axis=1).astype(float) / self.q

    @staticmethod
    def in_support(local: np.ndarray) -> np.ndarray:
        return np.all((local > SUPPORT_LO) & (local < SUPPORT_HI), axis=1)

    @staticmethod
    def in_plateau(local: np.ndarray) -> np.ndarray:
        return np.all((local >= PLATEAU_LO) & (local <= PLATEAU_HI), axis=1)


# ============================================================================
# Regression functions
# ============================================================================

class RegressionFn:
    """Map from [0,1]^d to [0,1]"""

    dimension: int

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: Point) -> float:
        return float(self.evaluate(x.as_array())[0])

    def rule_key(self) -> Optional[bytes]:
        """Identity of the induced threshold rule, when cheaply known"""
        return None


@dataclass(frozen=True, eq=False)
class CellwiseRegression(RegressionFn):
    """eta_sigma of a lower-bound family, identified by its code index"""

    family: Any
    sigma_index: int

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return self.family.d

    @property
    def grid(self) -> CellGrid:
        return self.family.grid

    @cached_property
    def sigma(self) -> np.ndarray:
        return self.family.sigma(self.sigma_index)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return self.family.eta_values(as_points(X, self.dimension), self.sigma)

    def bayes_labels(self) -> np.ndarray:
        return (self.sigma > 0).astype(np.int8)

    def rule_key(self) -> bytes:
        return self.bayes_labels().tobytes()


@dataclass(frozen=True, eq=False)
class TabulatedRegression(RegressionFn):
    """Piecewise constant on a regular grid of step ``step``; the last cell is closed at 1."""

    values: np.ndarray
    step: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 0:
            values = values.reshape(1)
        if len(set(values.shape)) != 1:
            raise ValueError("tabulated values must use the same number of cells on every axis")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValueError("regression values must lie in [0,1]")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return self.values.ndim

    @property
    def cells_per_axis(self) -> int:
        return self.values.shape[0]

    def cell_indices(self, X: np.ndarray) -> np.ndarray:
        idx = np.floor(as_points(X, self.dimension) / self.step).astype(np.int64)
        return np.clip(idx, 0, self.cells_per_axis - 1)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        idx = self.cell_indices(X)
        return self.values[tuple(idx.T)]

    def rule_key(self) -> bytes:
        labels = (self.values >= 0.5).astype(np.int8)
        return repr((self.step, labels.shape)).encode() + labels.tobytes()


@dataclass(frozen=True, eq=False)
class OpaqueRegression(RegressionFn):
    """Regression function given by a callback.

    With ``vectorized`` the callback receives the (m, d) array, otherwise it is
    called once per Point.
    """

    fn: Callable[..., Any]
    dimension: int = 1
    vectorized: bool = True

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = as_points(X, self.dimension)
        if self.vectorized:
            values = np.asarray(self.fn(X), dtype=float).reshape(-1)
        else:
            values = np.array([self.fn(Point(tuple(row))) for row in X], dtype=float)
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValueError("regression value outside [0,1]")
        return values


def constant_regression(value: float, d: int = 1) -> TabulatedRegression:
    return TabulatedRegression(np.full((1,) * d, float(value)), step=1.0)


# ============================================================================
# Prediction rules
# ============================================================================

class PredictionRule:
    """Map from [0,1]^d to {0,1}"""

    dimension: int

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: Point) -> int:
        return int(self.evaluate(x.as_array())[0])


@dataclass(frozen=True, eq=False)
class CellwiseRule(PredictionRule):
    """One label per grid cell, applied on the open support cube (1/8,7/8)^d
    of the cell; ``default_label`` everywhere else (the null set)."""

    grid: CellGrid
    labels: tuple[int, ...]
    default_label: int = TIE_LABEL

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if len(labels) != self.grid.b:
            raise ValueError(f"cellwise rule needs {self.grid.b} labels, got {len(labels)}")
        if any(v not in (0, 1) for v in labels) or self.default_label not in (0, 1):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "labels", labels)

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return self.grid.d

    @cached_property
    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int8)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        cells, local = self.grid.locate(X)
        inside = self.grid.in_support(local)
        return np.where(inside, self.label_array[cells], self.default_label).astype(np.int8)

    def flipped(self, cells: Iterable[int]) -> "CellwiseRule":
        labels = list(self.labels)
        for k in cells:
            labels[k] = 1 - labels[k]
        return CellwiseRule(self.grid, tuple(labels), self.default_label)

    def negated(self) -> "CellwiseRule":
        return self.flipped(range(self.grid.b))

    def with_default(self, label: int) -> "CellwiseRule":
        return CellwiseRule(self.grid, self.labels, label)


@dataclass(frozen=True, eq=False)
class ThresholdRule(PredictionRule):
    eta: RegressionFn

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return self.eta.dimension

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return (self.eta.evaluate(X) >= 0.5).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ConstantRule(PredictionRule):
    label: int
    dimension: int = 1

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return np.full(as_points(X, self.dimension).shape[0], self.label, dtype=np.int8)


@dataclass(frozen=True, eq=False)
class OpaqueRule(PredictionRule):
    fn: Callable[..., Any]
    dimension: int = 1
    vectorized: bool = True

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = as_points(X, self.dimension)
        if self.vectorized:
            values = np.asarray(self.fn(X)).reshape(-1)
        else:
            values = np.array([self.fn(Point(tuple(row))) for row in X])
        if not np.all((values == 0) | (values == 1)):
            raise ValueError("prediction rule must return 0 or 1")
        return values.astype(np.int8)


# ============================================================================
# Margin parameters
# ============================================================================

@dataclass(frozen=True)
class MarginSpec:
    """Margin exponent alpha (may be math.inf) and constant C_M.

    kappa and c_M are derived on access.
    """

    alpha: float
    C_M: float

    def __post_init__(self):
        from .margin_calculus import c_M_of, kappa_of_alpha

        kappa_of_alpha(self.alpha)
        c_M_of(self.C_M, self.alpha)

    @property
    def kappa(self) -> float:
        from .margin_calculus import kappa_of_alpha

        return kappa_of_alpha(self.alpha)

    @property
    def c_M(self) -> float:
        from .margin_calculus import c_M_of

        return c_M_of(self.C_M, self.alpha)


# ============================================================================
# Distributions and quadrature
# ============================================================================

@dataclass(frozen=True)
class SupportPiece:
    """Box carrying a constant marginal density; ``mask`` restricts it to a subset."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    density: float
    mask: Optional[Callable[[np.ndarray], np.ndarray]] = None


@runtime_checkable
class Distribution(Protocol):
    """Joint law of (X, Y) through its marginal pieces and eta.

    Implementations may additionally offer closed forms through the optional
    methods ``exact_excess(rule)``, ``exact_l1(f, g, exclude_zero_margin)``,
    ``margin_mass(t)``, ``exact_set_stats(descriptor)`` and
    ``exact_sup_distance(eta_bar)``; each returns None when it does not apply.
    """

    @property
    def dimension(self) -> int: ...

    @property
    def eta(self) -> RegressionFn: ...

    def support_pieces(self) -> Optional[Sequence[SupportPiece]]: ...


@dataclass(frozen=True, eq=False)
class UniformMarginal:
    """X uniform on [0,1]^d, Y | X ~ Bernoulli(eta(X))"""

    eta: RegressionFn
    dimension: int = 1

    def support_pieces(self) -> Sequence[SupportPiece]:
        return (SupportPiece((0.0,) * self.dimension, (1.0,) * self.dimension, 1.0),)


def _pieces(dist: Any) -> Sequence[SupportPiece]:
    getter = getattr(dist, "support_pieces", None)
    pieces = getter() if callable(getter) else None
    if pieces is None:
        raise UnsupportedDistributionError()
    return pieces


def _midpoint_chunks(piece: SupportPiece, resolution: int, chunk_size: int):
    lower = np.asarray(piece.lower, dtype=float)
    widths = (np.asarray(piece.upper, dtype=float) - lower) / resolution
    d = lower.size
    total = resolution ** d
    for start in range(0, total, chunk_size):
        flat = np.arange(start, min(total, start + chunk_size))
        idx = np.stack(np.unravel_index(flat, (resolution,) * d), axis=1)
        X = lower + (idx + 0.5) * widths
        weight = np.ones(X.shape[0]) if piece.mask is None else piece.mask(X).astype(float)
        yield X, weight, float(np.prod(widths))


def integrate(
    dist: Any,
    integrand: Callable[[np.ndarray], np.ndarray],
    resolution: Optional[int] = None,
    chunk_size: int = 1 << 18,
) -> float:
    """Midpoint-rule integral of ``integrand`` against the marginal of ``dist``.

    Args:
        dist: Distribution exposing support_pieces()
        integrand: Vectorized function of an (m, d) array
        resolution: Midpoints per axis per support piece (>= 2)

    Returns:
        The quadrature value
    """
    pieces = _pieces(dist)
    resolution = resolution or default_resolution(dist.dimension)
    if resolution < 2:
        raise ValueError("resolution must be at least 2 points per axis")
    total = 0.0
    for piece in pieces:
        if piece.density == 0.0:
            continue
        acc = 0.0
        cell_volume = 0.0
        for X, weight, cell_volume in _midpoint_chunks(piece, resolution, chunk_size):
            acc += float(np.sum(np.asarray(integrand(X), dtype=float) * weight))
        total += acc * piece.density * cell_volume
    return total


def essential_sup(
    fn: Callable[[np.ndarray], np.ndarray],
    dist: Any,
    resolution: Optional[int] = None,
    chunk_size: int = 1 << 18,
) -> float:
    """Largest value of ``fn`` over midpoints carrying positive density."""
    resolution = resolution or default_resolution(dist.dimension)
    best = 0.0
    for piece in _pieces(dist):
        if piece.density == 0.0:
            continue
        for X, weight, _ in _midpoint_chunks(piece, resolution, chunk_size):
            values = np.asarray(fn(X), dtype=float)[weight > 0]
            if values.size:
                best = max(best, float(values.max()))
    return best


# ============================================================================
# Risk operations
# ============================================================================

def bayes_rule(eta: RegressionFn) -> PredictionRule:
    """Rule equal to 1 exactly where eta >= 1/2"""
    if isinstance(eta, CellwiseRegression):
        return CellwiseRule(eta.grid, tuple(int(v) for v in eta.bayes_labels()), TIE_LABEL)
    return ThresholdRule(eta)


def empirical_risk(f: PredictionRule, D: Dataset) -> Fraction:
    """Fraction of samples with f(X_i) != Y_i"""
    if D.n == 0:
        raise EmptySampleError()
    mismatches = int(np.count_nonzero(f.evaluate(D.X) != D.y))
    return Fraction(mismatches, D.n)


def closed_form_excess(f: PredictionRule, dist: Any) -> Optional[float]:
    hook = getattr(dist, "exact_excess", None)
    return hook(f) if callable(hook) else None


def excess_risk_quadrature(
    f: PredictionRule,
    dist: Any,
    resolution: Optional[int] = None,
    exact: bool = True,
) -> float:
    """R(f) - R* as the integral of |2 eta - 1| over the disagreement set with f*.

    Closed forms offered by ``dist`` are used unless ``exact`` is False.
    """
    if exact:
        closed = closed_form_excess(f, dist)
        if closed is not None:
            return closed
    eta = dist.eta

    def integrand(X: np.ndarray) -> np.ndarray:
        values = eta.evaluate(X)
        disagree = f.evaluate(X) != (values >= 0.5)
        return np.abs(2.0 * values - 1.0) * disagree

    return integrate(dist, integrand, resolution)


def l1_disagreement(
    f: PredictionRule,
    g: PredictionRule,
    dist: Any,
    exclude_zero_margin: bool = False,
    resolution: Optional[int] = None,
    exact: bool = True,
) -> float:
    """L1(mu_X) distance of the +-1 valued rules 2f - 1 and 2g - 1, that is 2 mu_X({f != g}).

    With ``exclude_zero_margin`` the set {eta = 1/2} is removed from the
    disagreement region first.
    """
    if exact:
        hook = getattr(dist, "exact_l1", None)
        closed = hook(f, g, exclude_zero_margin) if callable(hook) else None
        if closed is not None:
            return closed
    eta = dist.eta

    def integrand(X: np.ndarray) -> np.ndarray:
        disagree = f.evaluate(X) != g.evaluate(X)
        if exclude_zero_margin:
            disagree &= eta.evaluate(X) != 0.5
        return 2.0 * disagree

    return integrate(dist, integrand, resolution)
