"""Kernel density estimators evaluated on an evaluation grid.

Three summation back-ends compute ``n^-1 sum_i U(t_j - X_i)`` for a
separable piecewise polynomial ``U``:

``"direct"``
    Exact summation over the grid nodes inside each observation's kernel
    support.  Default; any dimension.
``"binned"``
    Linear binning onto a refined lattice followed by FFT convolution.
    Approximate; any dimension.
``"lattice"``
    Exact and fast, one dimension only.  Each observation is written as
    ``cell + r`` on the grid lattice; on every lattice offset the kernel
    is a polynomial in ``r`` except across its knots, so the sum becomes
    a few FFT convolutions of per-cell power sums of ``r`` plus a sparse
    correction for the knots.
"""

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.signal import fftconvolve

from .kernels import SeparableFunction, as_bandwidth
from .numerics import EvaluationGrid, GridFunction, grid_with_spacing

__all__ = [
    "Sample",
    "DensityEstimate",
    "LatticeSummation",
    "METHODS",
    "default_grid",
    "kde_values",
    "fit_kde",
    "fit_aux",
    "smoothed_truth",
    "bias",
    "convolve_grid_function",
]

METHODS = ("direct", "binned", "lattice")
# fine-lattice points per evaluation-grid cell for linear binning
BINNING_REFINE = 32
BINNING_REFINE_MULTI = 16  # d >= 3
_CHUNK = 4_000_000


@dataclass(frozen=True, eq=False)
class Sample:
    """An ``n x d`` matrix of i.i.d. observations.

    Rows are stored in lexicographic order, which makes every sum over
    observations bitwise independent of the input order.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ValueError("sample must be an (n, d) array")
        if data.shape[0] < 1:
            raise ValueError("sample is empty")
        if not np.all(np.isfinite(data)):
            raise ValueError("sample contains non-finite values")
        data = data[np.lexsort(data.T[::-1])]
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def coerce(cls, x):
        return x if isinstance(x, Sample) else cls(x)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """A kernel estimate on a grid plus what produced it."""

    function: GridFunction
    bandwidth: tuple
    kernel: dict
    kind: str = "plain"
    eta: tuple = None
    method: str = "direct"

    @property
    def grid(self):
        return self.function.grid

    @property
    def values(self):
        return self.function.values

    @property
    def mass(self):
        return self.function.integral()

    @property
    def leakage(self):
        return abs(self.mass - 1.0)


def default_grid(sample, radius, spacing):
    """Box ``[min X - R, max X + R]`` per dimension with the given spacing."""
    sample = Sample.coerce(sample)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (sample.d,))
    lo = sample.data.min(axis=0) - radius
    hi = sample.data.max(axis=0) + radius
    return grid_with_spacing(lo, hi, spacing)


def _check_dims(sample, d, grid):
    if sample.d != d:
        raise ValueError(f"sample has dimension {sample.d}, kernel has dimension {d}")
    if grid.d != d:
        raise ValueError(f"grid has dimension {grid.d}, kernel has dimension {d}")


# -- direct summation ---------------------------------------------------------


def _axis_hits(x, pp, grid, axis):
    """Node index ranges ``[first, last]`` inside each observation's support."""
    t0 = grid.axes[axis][0]
    delta = grid.spacing[axis]
    m = grid.shape[axis]
    a, b = pp.support
    first = np.ceil((x + a - t0) / delta - 1e-9).astype(np.int64)
    last = np.floor((x + b - t0) / delta + 1e-9).astype(np.int64)
    return np.clip(first, 0, m), np.clip(last, -1, m - 1)


def _direct_1d(x, pp, grid, axis=0):
    """Yield chunks ``(rows, cols, vals)`` of ``pp(t_j - x_i)`` along one axis."""
    nodes = grid.axes[axis]
    first, last = _axis_hits(x, pp, grid, axis)
    count = np.maximum(last - first + 1, 0)
    width = int(count.max(initial=0))
    if width == 0:
        return
    step = max(1, _CHUNK // width)
    offs = np.arange(width)
    for start in range(0, x.size, step):
        sl = slice(start, start + step)
        idx = first[sl, None] + offs[None, :]
        valid = offs[None, :] < count[sl, None]
        v = pp(nodes[np.where(valid, idx, 0)] - x[sl, None])
        rows = np.broadcast_to(np.arange(start, start + idx.shape[0])[:, None], idx.shape)
        yield rows[valid], idx[valid], v[valid]


def _direct(data, factors, grid):
    n, d = data.shape
    if d == 1:
        out = np.zeros(grid.shape[0])
        for _, cols, vals in _direct_1d(data[:, 0], factors[0], grid):
            out += np.bincount(cols, weights=vals, minlength=grid.shape[0])
        return out / n
    from scipy import sparse

    mats = []
    for i, pp in enumerate(factors):
        m = sparse.csr_matrix((n, grid.shape[i]))
        for r, c, v in _direct_1d(data[:, i], pp, grid, axis=i):
            m = m + sparse.csr_matrix((v, (r, c)), shape=(n, grid.shape[i]))
        mats.append(m)
    if d == 2:
        return (mats[0].T @ mats[1]).toarray() / n
    out = np.zeros(grid.shape)
    letters = "abcdefghij"[:d]
    spec = ",".join("i" + c for c in letters) + "->" + letters
    for start in range(0, n, 256):
        blocks = [m[start:start + 256].toarray() for m in mats]
        out += np.einsum(spec, *blocks)
    return out / n


# -- linear binning -----------------------------------------------------------


def _binned(data, factors, grid, refine=None):
    n, d = data.shape
    if refine is None:
        refine = BINNING_REFINE if d <= 2 else BINNING_REFINE_MULTI
    fine = []
    for i, pp in enumerate(factors):
        delta = grid.spacing[i] / refine
        w = int(np.ceil(pp.radius / delta)) + 1
        fine.append((grid.axes[i][0], delta, (grid.shape[i] - 1) * refine + 1, w))
    shape = tuple(m + 2 * w + 1 for _, _, m, w in fine)
    counts = np.zeros(shape)
    base, frac = [], []
    for i, (t0, delta, _, w) in enumerate(fine):
        pos = (data[:, i] - t0) / delta + w
        left = np.floor(pos).astype(np.int64)
        base.append(left)
        frac.append(pos - left)
    keep = np.ones(n, dtype=bool)
    for i, s in enumerate(shape):
        keep &= (base[i] >= 0) & (base[i] + 1 < s)
    for corner in range(2**d):
        idx, wt = [], np.ones(int(keep.sum()))
        for i in range(d):
            up = (corner >> i) & 1
            idx.append(base[i][keep] + up)
            wt = wt * (frac[i][keep] if up else 1.0 - frac[i][keep])
        np.add.at(counts, tuple(idx), wt)
    out = counts
    for i, (_, delta, m, w) in enumerate(fine):
        taps = factors[i](np.arange(-w, w + 1) * delta)
        kshape = [1] * d
        kshape[i] = taps.size
        full = fftconvolve(out, taps.reshape(kshape), mode="full", axes=i)
        sl = [slice(None)] * d
        # full index of lattice point k (before padding offset w) is k + 2w
        sl[i] = slice(2 * w, 2 * w + m, refine)
        out = full[tuple(sl)]
    return out / n


# -- exact lattice summation (1-d) --------------------------------------------


@dataclass(eq=False)
class LatticeSummation:
    """Exact 1-d summation on a fixed lattice, reusable across kernels.

    Parameters
    ----------
    x : array_like, shape (n,)
        Observations.
    grid : EvaluationGrid
        One-dimensional evaluation grid.
    max_radius : float
        Largest kernel support radius that will be evaluated.
    spectra : dict, optional
        Shared cache of kernel spectra keyed by caller-supplied keys; it
        may be reused by engines built on the same grid and radius.
    """

    x: np.ndarray
    grid: EvaluationGrid
    max_radius: float
    spectra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid.d != 1:
            raise ValueError("lattice summation is one-dimensional")
        x = np.sort(np.asarray(self.x, dtype=float).ravel())
        self.n = x.size
        self.t0 = float(self.grid.axes[0][0])
        self.delta = float(self.grid.spacing[0])
        self.m = self.grid.shape[0]
        self.w = int(np.ceil(self.max_radius / self.delta)) + 2
        pos = (x - self.t0) / self.delta
        cell = np.floor(pos)
        r = pos - cell
        cell = cell.astype(np.int64)
        keep = (cell >= -self.w) & (cell < self.m + self.w)
        self.cell = cell[keep]
        self.r = r[keep]
        self.nfft = sfft.next_fast_len(self.m + 4 * self.w, real=True)
        self._sums = {}
        self._lock = threading.Lock()

    def _sum_spectrum(self, k):
        with self._lock:
            if k not in self._sums:
                s = np.bincount(
                    self.cell + self.w, weights=self.r**k, minlength=self.m + 2 * self.w
                )
                self._sums[k] = sfft.rfft(s, self.nfft)
            return self._sums[k]

    def _kernel_spectra(self, pp, key):
        full_key = (key, self.delta, self.nfft, self.w) if key is not None else None
        if full_key is not None and full_key in self.spectra:
            return self.spectra[full_key]
        deg = pp.degree
        offsets = np.arange(-self.w, self.w + 1)
        taylor = pp.left_taylor(offsets * self.delta, deg)
        taylor = taylor * (-self.delta) ** np.arange(deg + 1)
        spec = sfft.rfft(taylor, self.nfft, axis=0)
        if full_key is not None:
            self.spectra[full_key] = spec
        return spec

    def evaluate(self, pp, key=None):
        """``n^-1 sum_i pp(t_j - x_i)`` at every grid node."""
        if pp.radius > (self.w - 1) * self.delta:
            raise ValueError("kernel support exceeds the lattice engine's max_radius")
        spec = self._kernel_spectra(pp, key)
        total = np.zeros(self.nfft // 2 + 1, dtype=complex)
        for k in range(pp.degree + 1):
            total += spec[:, k] * self._sum_spectrum(k)
        full = sfft.irfft(total, self.nfft)
        out = full[2 * self.w: 2 * self.w + self.m].copy()
        out += self._knot_corrections(pp)
        return out / self.n

    def _knot_corrections(self, pp):
        out = np.zeros(self.m)
        deg = pp.degree
        powers = (-self.delta) ** np.arange(deg + 1)
        for i, kappa in enumerate(pp.knots):
            # L is the first offset whose left Taylor row lies right of the
            # knot, decided by the same float comparison left_taylor uses
            ratio = kappa / self.delta
            L = int(np.ceil(ratio))
            while L * self.delta <= kappa:
                L += 1
            while (L - 1) * self.delta > kappa:
                L -= 1
            rstar = max(L - ratio, 0.0)
            y = L * self.delta
            jump = pp.piece_taylor(i - 1, y, deg) - pp.piece_taylor(i, y, deg)
            jump = jump * powers
            hit = self.r > rstar
            if not np.any(hit):
                continue
            target = self.cell[hit] + L
            ok = (target >= 0) & (target < self.m)
            vals = np.polynomial.polynomial.polyval(self.r[hit][ok], jump)
            out += np.bincount(target[ok], weights=vals, minlength=self.m)
        return out


# -- public API ---------------------------------------------------------------


def kde_values(sample, fn, grid, method="direct", engine=None, key=None, refine=None):
    """Values of ``n^-1 sum_i fn(t - X_i)`` at the nodes of ``grid``."""
    sample = Sample.coerce(sample)
    factors = fn.factors if isinstance(fn, SeparableFunction) else tuple(fn)
    _check_dims(sample, len(factors), grid)
    if method == "direct":
        vals = _direct(sample.data, factors, grid)
    elif method == "binned":
        vals = _binned(sample.data, factors, grid, refine=refine)
    elif method == "lattice":
        if grid.d != 1:
            raise ValueError("the lattice method is one-dimensional; use 'direct'")
        if engine is None:
            engine = LatticeSummation(sample.data[:, 0], grid, factors[0].radius)
        vals = engine.evaluate(factors[0], key=key)
    else:
        raise ValueError(f"unknown summation method {method!r}; choose from {METHODS}")
    return np.asarray(vals).reshape(grid.shape)


def _grid_for(sample, K, radius_per_dim, h_min, grid, grid_res):
    if grid is not None:
        return grid
    spacing = min(h_min) / grid_res
    return default_grid(sample, np.asarray(radius_per_dim) * 1.05, spacing)


def fit_kde(sample, K, h, grid=None, method="direct", grid_res=4, **kw):
    """Kernel estimator ``f_h(t) = n^-1 sum_i K_h(t - X_i)`` on a grid."""
    sample = Sample.coerce(sample)
    h = as_bandwidth(h, K.d)
    Kh = K.scaled(h)
    grid = _grid_for(sample, K, Kh.radii, h, grid, grid_res)
    vals = kde_values(sample, Kh, grid, method=method, key=("K", h), **kw)
    return DensityEstimate(GridFunction(grid, vals), h, K.describe(), "plain", None, method)


def fit_aux(sample, K, h, eta, grid=None, method="direct", grid_res=4, **kw):
    """Auxiliary estimator ``n^-1 sum_i [K_h * K_eta](t - X_i)``."""
    sample = Sample.coerce(sample)
    h = as_bandwidth(h, K.d)
    eta = as_bandwidth(eta, K.d)
    U = K.convolved(h, eta)
    grid = _grid_for(sample, K, U.radii, np.minimum(h, eta), grid, grid_res)
    vals = kde_values(sample, U, grid, method=method, key=("KK", h, eta), **kw)
    return DensityEstimate(GridFunction(grid, vals), h, K.describe(), "aux", eta, method)


def convolve_grid_function(g, fn):
    """Midpoint-rule convolution ``int fn(t - x) g(x) dx`` on ``g``'s grid.

    ``g`` is treated as zero outside its box.
    """
    grid = g.grid
    factors = fn.factors if isinstance(fn, SeparableFunction) else tuple(fn)
    if len(factors) != grid.d:
        raise ValueError("kernel and grid dimensions differ")
    out = np.asarray(g.values)
    for i, pp in enumerate(factors):
        delta = grid.spacing[i]
        w = int(np.ceil(pp.radius / delta)) + 1
        if 2 * pp.radius >= grid.hi[i] - grid.lo[i]:
            raise ValueError(
                f"grid too small: dimension {i} box width {grid.hi[i] - grid.lo[i]:.4g} "
                f"does not exceed the kernel support {2 * pp.radius:.4g}"
            )
        taps = pp(np.arange(-w, w + 1) * delta) * delta
        kshape = [1] * grid.d
        kshape[i] = taps.size
        out = fftconvolve(out, taps.reshape(kshape), mode="same", axes=i)
    return GridFunction(grid, out)


def smoothed_truth(f_true, K, h):
    """``K_h * f`` on the grid of ``f_true``; the bias is this minus ``f_true``."""
    return convolve_grid_function(f_true, K.scaled(as_bandwidth(h, K.d)))


def bias(f_true, K, h):
    """``B_h(f, .) = K_h * f - f``."""
    return smoothed_truth(f_true, K, h) - f_true
