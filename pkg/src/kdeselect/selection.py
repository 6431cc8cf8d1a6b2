"""Majorants, the selection criterion and the bandwidth argmin.

For every pair ``(h, eta)`` of candidate bandwidths the rule compares the
auxiliary estimator ``f_{h,eta}`` (kernel ``K_h * K_eta``) with ``f_eta``
and penalizes the difference with a data-free (``s <= 2``) or empirical
(``s > 2``) majorant of its stochastic part.

Pairing convention
------------------
Two readings of the pairwise majorant are supported:

``"consistent"`` (default)
    ``m(h, eta) = g(K_eta) + g(K_h * K_eta)``, so that
    ``m*(h) = max_eta m(eta, h) = g(K_h) + max_eta g(K_h * K_eta)``.
    This is the form the oracle-inequality argument relies on.
``"displayed"``
    ``m(h, eta) = g(K_h) + g(K_h * K_eta)`` with the same
    ``m*(h) = max_eta m(eta, h)``.  Here ``m*`` is dominated by the
    smallest bandwidth in the grid and barely depends on ``h``.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    DensityEstimate,
    LatticeSummation,
    Sample,
    default_grid,
    kde_values,
)
from .kernels import as_bandwidth
from .numerics import GridFunction, lp_norm, positive_part

__all__ = [
    "Bandwidth",
    "BandwidthGrid",
    "GridCapExceeded",
    "GridTooLarge",
    "MajorantConfig",
    "MajorantTable",
    "SelectionResult",
    "rho_det",
    "rho_hat",
    "r_hat",
    "g_s",
    "build_majorants",
    "criterion",
    "select",
    "selection_grid",
    "PAIRINGS",
]

PAIRINGS = ("consistent", "displayed")
GRID_CAP = 256
MAX_EVAL_NODES = 20_000_000


class GridCapExceeded(ValueError):
    """The bandwidth grid has more than ``GRID_CAP`` members."""


class GridTooLarge(ValueError):
    """The evaluation grid would exceed the node budget."""


class Bandwidth(tuple):
    """Bandwidth vector ``h``; a tuple of positive floats with a volume."""

    def __new__(cls, h, d=None):
        return super().__new__(cls, as_bandwidth(h, d))

    @property
    def d(self):
        return len(self)

    @property
    def volume(self):
        return float(np.prod(self))

    def __repr__(self):
        return f"Bandwidth({tuple(self)!r})"


def _sort_key(h):
    """Tie-break order: smallest volume, then lexicographic."""
    return (h.volume, tuple(h))


@dataclass(frozen=True, eq=False)
class BandwidthGrid:
    """Finite candidate set ``H`` inside the box ``[h_min, h_max]``."""

    h_min: tuple
    h_max: tuple
    nodes: tuple
    members: tuple = field(default=None)

    def __post_init__(self):
        d = len(self.h_min)
        if d == 0 or len(self.h_max) != d or len(self.nodes) != d:
            raise ValueError("h_min, h_max and node lists must share the dimension")
        for i, (a, b) in enumerate(zip(self.h_min, self.h_max)):
            if not (0 < a <= b <= 1):
                raise ValueError(f"dimension {i}: need 0 < h_min <= h_max <= 1, got {a}, {b}")
        nodes = tuple(np.asarray(v, dtype=float) for v in self.nodes)
        for i, v in enumerate(nodes):
            if v.size == 0 or np.any(np.diff(v) <= 0):
                raise ValueError(f"dimension {i}: nodes must be nonempty and strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        if self.members is None:
            members = tuple(Bandwidth(c) for c in itertools.product(*nodes))
            object.__setattr__(self, "members", members)
        else:
            members = tuple(Bandwidth(h, d) for h in self.members)
            if not members:
                raise ValueError("bandwidth grid is empty")
            object.__setattr__(self, "members", members)
        tol = 1e-12
        for h in self.members:
            if any(x < a * (1 - tol) or x > b * (1 + tol) for x, a, b in zip(h, self.h_min, self.h_max)):
                raise ValueError(f"bandwidth {tuple(h)} lies outside [h_min, h_max]")

    @classmethod
    def geometric(cls, h_min, h_max, ratio=math.sqrt(2.0), num=None, allow_large=False):
        """Per-dimension nodes ``h_min * ratio^k`` up to ``h_max``.

        With ``num`` given, ``num`` log-spaced nodes from ``h_min`` to
        ``h_max`` inclusive are used instead of ``ratio``.
        """
        h_min = tuple(np.atleast_1d(np.asarray(h_min, dtype=float)))
        h_max = tuple(np.atleast_1d(np.asarray(h_max, dtype=float)))
        if len(h_min) == 1 and len(h_max) > 1:
            h_min = h_min * len(h_max)
        if len(h_max) == 1 and len(h_min) > 1:
            h_max = h_max * len(h_min)
        nodes = []
        for a, b in zip(h_min, h_max):
            if not (0 < a <= b <= 1):
                raise ValueError(f"need 0 < h_min <= h_max <= 1, got {a}, {b}")
            if num is not None:
                if int(num) != num or num < 1:
                    raise ValueError("num must be a positive integer")
                v = np.geomspace(a, b, int(num)) if num > 1 else np.array([a])
            else:
                if not ratio > 1:
                    raise ValueError(f"ratio must exceed 1, got {ratio}")
                k = int(np.floor(np.log(b / a) / np.log(ratio) + 1e-9))
                v = a * ratio ** np.arange(k + 1)
            nodes.append(v)
        size = int(np.prod([v.size for v in nodes]))
        if size > GRID_CAP and not allow_large:
            raise GridCapExceeded(
                f"bandwidth grid has {size} members (cap {GRID_CAP}); "
                "raise ratio, narrow [h_min, h_max] or allow large grids"
            )
        return cls(h_min, h_max, tuple(nodes))

    @classmethod
    def from_nodes(cls, members, allow_large=False):
        """Explicit candidate set; the box is the coordinate-wise hull."""
        members = [Bandwidth(h) for h in members]
        if not members:
            raise ValueError("bandwidth grid is empty")
        d = members[0].d
        members = [Bandwidth(h, d) for h in members]
        if len(set(members)) != len(members):
            raise ValueError("duplicate bandwidths in the grid")
        if len(members) > GRID_CAP and not allow_large:
            raise GridCapExceeded(f"bandwidth grid has {len(members)} members (cap {GRID_CAP})")
        arr = np.array(members)
        nodes = tuple(np.unique(arr[:, i]) for i in range(d))
        return cls(tuple(arr.min(axis=0)), tuple(arr.max(axis=0)), nodes, tuple(members))

    @property
    def d(self):
        return len(self.h_min)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def v_min(self):
        return float(np.prod(self.h_min))

    @property
    def v_max(self):
        return float(np.prod(self.h_max))

    @property
    def a_h(self):
        return float(np.prod([max(1.0, math.log(b / a)) for a, b in zip(self.h_min, self.h_max)]))

    @property
    def b_h(self):
        return max(1.0, math.log2(self.v_max / self.v_min))

    def describe(self):
        return {
            "h_min": list(self.h_min),
            "h_max": list(self.h_max),
            "size": len(self),
            "nodes": [list(v) for v in self.nodes],
            "A_H": self.a_h,
            "B_H": self.b_h,
        }


@dataclass(frozen=True)
class MajorantConfig:
    """Loss exponent, sample size and majorant conventions."""

    s: float
    n: int
    q: float = 1.0
    pairing: str = "consistent"

    def __post_init__(self):
        s = float(self.s)
        if not (s >= 1 and np.isfinite(s)):
            raise ValueError(f"s must be a finite number >= 1, got {self.s}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not float(self.q) >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}, got {self.pairing!r}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "q", float(self.q))

    @property
    def branch(self):
        if self.s < 2:
            return "s<2"
        return "s=2" if self.s == 2 else "s>2"

    @property
    def c_s(self):
        """Rosenthal constant ``15 s / ln s``; defined only for ``s > 2``."""
        if self.s <= 2:
            return None
        return 15.0 * self.s / math.log(self.s)


def rho_det(norm_s, norm_2, cfg):
    """Deterministic majorant for ``s in [1, 2]``."""
    if cfg.s > 2:
        raise ValueError("rho_det applies to s <= 2; use rho_hat for s > 2")
    if norm_s < 0 or norm_2 < 0:
        raise ValueError("norms must be nonnegative")
    if cfg.s < 2:
        return 4.0 * cfg.n ** (1.0 / cfg.s - 1.0) * norm_s
    return cfg.n ** -0.5 * norm_2


def _check_grid_covers(U, sample, grid):
    lo = sample.data.min(axis=0) - U.radii
    hi = sample.data.max(axis=0) + U.radii
    if not grid.contains_box(lo, hi):
        raise ValueError(
            "grid too small: it must contain the data range inflated by the "
            "support of the weight function"
        )


def rho_hat(U, sample, grid, cfg, method="direct", engine=None):
    """Empirical majorant for ``s > 2``.

    ``c_s {n^-1/2 (int [n^-1 sum_i U^2(t - X_i)]^(s/2) dt)^(1/s) + 2 n^(1/s-1) ||U||_s}``
    with the integral taken over ``grid``.
    """
    if cfg.s <= 2:
        raise ValueError("rho_hat applies to s > 2; use rho_det for s <= 2")
    sample = Sample.coerce(sample)
    _check_grid_covers(U, sample, grid)
    sq = U.squared()
    key = ("U2",) + _key_of(U)
    vals = kde_values(sample, sq, grid, method=method, engine=engine, key=key)
    vals = np.maximum(vals, 0.0)
    inner = float(np.sum(vals ** (cfg.s / 2.0)) * grid.weight) ** (1.0 / cfg.s)
    n = sample.n
    return cfg.c_s * (n**-0.5 * inner + 2.0 * n ** (1.0 / cfg.s - 1.0) * U.norm(cfg.s))


def r_hat(U, sample, grid, cfg, method="direct", engine=None, norm_2=None):
    """``max(rho_hat(U), n^-1/2 ||U||_2)``."""
    rho = rho_hat(U, sample, grid, cfg, method=method, engine=engine)
    if norm_2 is None:
        norm_2 = U.norm(2.0)
    return max(rho, Sample.coerce(sample).n ** -0.5 * norm_2)


def g_s(U, cfg, sample=None, grid=None, method="direct", engine=None):
    """``32 rho_s`` (s < 2), ``(25/3) rho_2`` (s = 2) or ``32 r_hat`` (s > 2)."""
    if cfg.s < 2:
        return 32.0 * rho_det(U.norm(cfg.s), 0.0, cfg)
    if cfg.s == 2:
        return 25.0 / 3.0 * rho_det(U.norm(2.0), U.norm(2.0), cfg)
    if sample is None or grid is None:
        raise ValueError("s > 2 needs the sample and an evaluation grid")
    return 32.0 * r_hat(U, sample, grid, cfg, method=method, engine=engine)


def _key_of(U):
    if hasattr(U, "eta"):
        return ("KK", tuple(U.h), tuple(U.eta))
    return ("K", tuple(U.h))


@dataclass(frozen=True, eq=False)
class MajorantTable:
    """``g`` values, the pairwise majorant ``m`` and ``m*`` over a grid ``H``.

    ``m[i, j]`` is ``m(H[i], H[j])`` and ``m_star[i] = max_j m[j, i]``.
    """

    bandwidths: tuple
    g_single: np.ndarray
    g_pair: np.ndarray
    m: np.ndarray
    m_star: np.ndarray
    pairing: str

    def index(self, h):
        return self.bandwidths.index(Bandwidth(h, len(self.bandwidths[0])))

    def to_dict(self):
        return {
            "pairing": self.pairing,
            "bandwidths": [list(h) for h in self.bandwidths],
            "g_single": self.g_single.tolist(),
            "g_pair": self.g_pair.tolist(),
            "m": self.m.tolist(),
            "m_star": self.m_star.tolist(),
        }


def _pmap(fn, items, threads):
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def build_majorants(sample, K, H, cfg, grid=None, method="direct", engine=None, threads=1):
    """Full tables of ``g``, ``m`` and ``m*`` over ``H`` and ``H x H``."""
    sample = Sample.coerce(sample)
    members = tuple(H.members) if isinstance(H, BandwidthGrid) else tuple(Bandwidth(h, K.d) for h in H)
    k = len(members)
    if k == 0:
        raise ValueError("bandwidth grid is empty")
    if cfg.s > 2 and grid is None:
        grid = selection_grid(sample, K, members)

    def g_of(U):
        return g_s(U, cfg, sample=sample, grid=grid, method=method, engine=engine)

    g_single = np.array(_pmap(lambda h: g_of(K.scaled(h)), members, threads))
    pairs = [(i, j) for i in range(k) for j in range(i, k)]
    vals = _pmap(lambda ij: g_of(K.convolved(members[ij[0]], members[ij[1]])), pairs, threads)
    g_pair = np.empty((k, k))
    for (i, j), v in zip(pairs, vals):
        g_pair[i, j] = g_pair[j, i] = v
    if cfg.pairing == "displayed":
        m = g_single[:, None] + g_pair
    else:
        m = g_single[None, :] + g_pair
    m_star = m.max(axis=0)
    return MajorantTable(members, g_single, g_pair, m, m_star, cfg.pairing)


def selection_grid(sample, K, members, grid_res=4, max_nodes=MAX_EVAL_NODES):
    """Evaluation grid covering every ``K_h * K_eta`` placed at the data.

    Box: data range inflated by ``2 r h_max * 1.05`` per dimension;
    spacing ``min(h_min) / grid_res``.
    """
    sample = Sample.coerce(sample)
    arr = np.array([tuple(h) for h in members])
    radius = 2.0 * K.radius * arr.max(axis=0) * 1.05
    spacing = arr.min() / grid_res
    span = np.ptp(sample.data, axis=0) + 2 * radius
    count = float(np.prod(np.ceil(span / spacing)))
    if count > max_nodes:
        raise GridTooLarge(
            f"evaluation grid would have about {count:.3g} nodes (budget {max_nodes:.3g}); "
            "increase h_min or lower the grid resolution"
        )
    return default_grid(sample, radius, spacing)


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Selected bandwidth with the full criterion trace.

    ``criterion`` and ``sup_term`` are NaN for bandwidths skipped by
    pruning; for those ``m_star`` already exceeds the optimum.  ``fits``
    maps each bandwidth to the node values of its plain estimator.
    """

    h_hat: Bandwidth
    bandwidths: tuple
    criterion: np.ndarray
    sup_term: np.ndarray
    m_star: np.ndarray
    table: MajorantTable
    estimate: DensityEstimate
    diagnostics: dict
    fits: dict = field(default_factory=dict, repr=False)

    @property
    def index(self):
        return self.bandwidths.index(self.h_hat)

    @property
    def evaluated(self):
        return ~np.isnan(self.criterion)

    def to_dict(self):
        def clean(a):
            return [None if np.isnan(v) else float(v) for v in a]

        return {
            "h_hat": list(self.h_hat),
            "bandwidths": [list(h) for h in self.bandwidths],
            "criterion": clean(self.criterion),
            "sup_term": clean(self.sup_term),
            "m_star": self.m_star.tolist(),
            "majorants": self.table.to_dict(),
            "diagnostics": self.diagnostics,
        }


class _Context:
    """Caches shared by the criterion evaluations of one selection run."""

    def __init__(self, sample, K, members, grid, cfg, method, engine):
        self.sample = sample
        self.K = K
        self.members = members
        self.grid = grid
        self.cfg = cfg
        self.method = method
        self.engine = engine
        self.f_eta = {}

    def values(self, U, key):
        return kde_values(self.sample, U, self.grid, method=self.method, engine=self.engine, key=key)

    def fit(self, h):
        if h not in self.f_eta:
            self.f_eta[h] = self.values(self.K.scaled(h), ("K", tuple(h)))
        return self.f_eta[h]


def criterion(h, ctx, table):
    """``max_eta [||f_{h,eta} - f_eta||_s - m(h, eta)]_+ + m*(h)``.

    Returns ``(R_h, sup_term)``.
    """
    i = table.index(h)
    w = ctx.grid.weight
    s = ctx.cfg.s
    best = 0.0
    for j, eta in enumerate(ctx.members):
        aux = ctx.values(ctx.K.convolved(h, eta), ("KK",) + tuple(sorted((tuple(h), tuple(eta)))))
        diff = np.abs(aux - ctx.fit(eta))
        dist = float(np.sum(diff**s) * w) ** (1.0 / s)
        best = max(best, positive_part(dist - table.m[i, j]))
    return best + float(table.m_star[i]), best


def select(
    sample,
    K,
    H,
    cfg=None,
    grid=None,
    method="direct",
    prune=False,
    threads=1,
    spectra=None,
    grid_res=4,
    s=2.0,
    pairing="consistent",
):
    """Minimize the criterion over ``H``.

    Parameters
    ----------
    sample : Sample or array_like
    K : ProductKernel
    H : BandwidthGrid or sequence of bandwidths
    cfg : MajorantConfig, optional
        Built from ``s``, ``pairing`` and the sample size when omitted.
    grid : EvaluationGrid, optional
        Defaults to :func:`selection_grid`.
    method : {"direct", "binned", "lattice"}
        Summation back-end for every estimator.
    prune : bool
        Visit bandwidths in increasing ``m*`` order and skip those whose
        ``m*`` already exceeds the best criterion value.  The selected
        bandwidth is unchanged; skipped entries are NaN in the trace.
    threads : int
        Worker threads for the majorant table and the criterion loop.
    spectra : dict, optional
        Kernel-spectrum cache shared across calls (lattice method only).
    """
    sample = Sample.coerce(sample)
    if isinstance(H, BandwidthGrid):
        members = tuple(H.members)
    else:
        members = tuple(Bandwidth(h, K.d) for h in H)
    if not members:
        raise ValueError("bandwidth grid is empty")
    if cfg is None:
        cfg = MajorantConfig(s=s, n=sample.n, pairing=pairing)
    if cfg.n != sample.n:
        raise ValueError(f"config has n={cfg.n} but the sample has {sample.n} rows")
    if grid is None:
        grid = selection_grid(sample, K, members, grid_res=grid_res)
    engine = None
    if method == "lattice":
        radius = 2.0 * K.radius * max(max(h) for h in members)
        engine = LatticeSummation(sample.data[:, 0], grid, radius, spectra if spectra is not None else {})
    table = build_majorants(sample, K, members, cfg, grid=grid, method=method, engine=engine, threads=threads)
    ctx = _Context(sample, K, members, grid, cfg, method, engine)

    k = len(members)
    crit = np.full(k, np.nan)
    sup = np.full(k, np.nan)
    if prune:
        order = sorted(range(k), key=lambda i: (table.m_star[i], _sort_key(members[i])))
        best = np.inf
        for i in order:
            if table.m_star[i] > best:
                continue
            crit[i], sup[i] = criterion(members[i], ctx, table)
            best = min(best, crit[i])
    else:
        _pmap(ctx.fit, members, threads)
        for i, (r, t) in enumerate(_pmap(lambda h: criterion(h, ctx, table), members, threads)):
            crit[i], sup[i] = r, t

    done = [i for i in range(k) if not np.isnan(crit[i])]
    i_hat = min(done, key=lambda i: (crit[i], _sort_key(members[i])))
    h_hat = members[i_hat]
    f_hat = GridFunction(grid, ctx.fit(h_hat))
    estimate = DensityEstimate(f_hat, tuple(h_hat), K.describe(), "plain", None, method)
    hgrid = H if isinstance(H, BandwidthGrid) else BandwidthGrid.from_nodes(members, allow_large=True)
    diagnostics = {
        "A_H": hgrid.a_h,
        "B_H": hgrid.b_h,
        "grid_shape": list(grid.shape),
        "grid_lo": list(grid.lo),
        "grid_hi": list(grid.hi),
        "method": method,
        "pairing": cfg.pairing,
        "s": cfg.s,
        "n": cfg.n,
        "evaluated": len(done),
        "mass": estimate.mass,
    }
    return SelectionResult(
        h_hat, members, crit, sup, table.m_star, table, estimate, diagnostics, dict(ctx.f_eta)
    )
