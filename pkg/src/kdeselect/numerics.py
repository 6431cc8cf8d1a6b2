"""Rectangular evaluation grids, midpoint quadrature and L_p norms."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "EvaluationGrid",
    "GridFunction",
    "make_grid",
    "grid_with_spacing",
    "lp_norm",
    "positive_part",
    "loglog_slope",
]


@dataclass(frozen=True)
class EvaluationGrid:
    """Tensor grid of cell midpoints over a box.

    Every node carries the same quadrature weight, the product of the
    per-dimension spacings.
    """

    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        shape = tuple(int(m) for m in self.shape)
        if not (len(lo) == len(hi) == len(shape)) or not lo:
            raise ValueError("bounds and node counts must have the same nonzero length")
        for i, (a, b, m) in enumerate(zip(lo, hi, shape)):
            if not (np.isfinite(a) and np.isfinite(b)):
                raise ValueError(f"dimension {i}: bounds must be finite")
            if not a < b:
                raise ValueError(f"dimension {i}: lower bound {a} must be below upper bound {b}")
            if m < 2:
                raise ValueError(f"dimension {i}: need at least 2 nodes, got {m}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)

    @property
    def d(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self):
        return np.array([(b - a) / m for a, b, m in zip(self.lo, self.hi, self.shape)])

    @property
    def weight(self):
        """Quadrature weight of a single node."""
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @cached_property
    def axes(self):
        return [
            a + (np.arange(m) + 0.5) * (b - a) / m
            for a, b, m in zip(self.lo, self.hi, self.shape)
        ]

    @property
    def weights(self):
        return np.full(self.shape, self.weight)

    def nodes(self):
        """All nodes as an ``(size, d)`` array in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains_box(self, lo, hi):
        return all(a <= l and h <= b for a, b, l, h in zip(self.lo, self.hi, lo, hi))

    def shifted(self, offset):
        offset = np.broadcast_to(np.asarray(offset, dtype=float), (self.d,))
        return EvaluationGrid(
            tuple(np.add(self.lo, offset)), tuple(np.add(self.hi, offset)), self.shape
        )


def make_grid(bounds, nodes_per_dim):
    """Build a midpoint grid from ``[(lo, hi), ...]`` and node counts."""
    bounds = [tuple(b) for b in bounds]
    nodes_per_dim = list(nodes_per_dim)
    if len(bounds) != len(nodes_per_dim):
        raise ValueError("one node count per dimension is required")
    for i, b in enumerate(bounds):
        if len(b) != 2:
            raise ValueError(f"dimension {i}: an interval needs exactly two endpoints")
    for i, m in enumerate(nodes_per_dim):
        if int(m) != m or m <= 0:
            raise ValueError(f"dimension {i}: node count must be a positive integer, got {m}")
    return EvaluationGrid(
        tuple(b[0] for b in bounds), tuple(b[1] for b in bounds), tuple(nodes_per_dim)
    )


def grid_with_spacing(lo, hi, spacing):
    """Midpoint grid over ``[lo, hi]`` whose spacing does not exceed ``spacing``."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), lo.shape)
    if np.any(spacing <= 0):
        raise ValueError("spacing must be positive")
    counts = np.maximum(np.ceil((hi - lo) / spacing - 1e-9).astype(int), 2)
    return EvaluationGrid(tuple(lo), tuple(hi), tuple(counts))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a real function at the nodes of an :class:`EvaluationGrid`."""

    grid: EvaluationGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid, fn):
        """Sample ``fn`` (taking an ``(N, d)`` array) at the grid nodes."""
        return cls(grid, np.asarray(fn(grid.nodes())).reshape(grid.shape))

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            self._check(c)
            return GridFunction(self.grid, self.values * c.values)
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def integral(self):
        return float(np.sum(self.values) * self.grid.weight)

    def norm(self, p=2.0):
        return lp_norm(self, p)


def lp_norm(g, p):
    """Midpoint-rule L_p norm of a grid function (``p = inf`` allowed)."""
    p = float(p)
    if np.isnan(p) or p < 1:
        raise ValueError(f"norm exponent must be >= 1, got {p}")
    v = np.abs(g.values)
    if np.isinf(p):
        return float(np.max(v))
    if p == 1.0:
        return float(np.sum(v) * g.grid.weight)
    if p == 2.0:
        return float(np.sqrt(np.sum(v * v) * g.grid.weight))
    return float((np.sum(v**p) * g.grid.weight) ** (1.0 / p))


def positive_part(x):
    return max(float(x), 0.0)


def loglog_slope(points):
    """Least-squares slope of ``log y`` against ``log x``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (x, y) pairs")
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points to fit a slope")
    if np.any(pts <= 0):
        raise ValueError("log-log regression needs strictly positive coordinates")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("x values must not all coincide")
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)
