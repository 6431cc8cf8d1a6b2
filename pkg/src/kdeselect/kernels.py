"""Base kernels, the order-l construction, product kernels and their convolutions.

All kernels are separable: a d-dimensional kernel is the product of d
one-dimensional piecewise polynomial factors, so norms factorize and
convolutions reduce to d one-dimensional convolutions.
"""

import threading
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .piecewise import PiecewisePolynomial, _taylor_shift

__all__ = [
    "BaseKernel1D",
    "HigherOrderKernel1D",
    "SeparableFunction",
    "ProductKernel",
    "ScaledKernel",
    "ConvKernel",
    "triangular",
    "biweight",
    "BASE_KERNELS",
    "get_base_kernel",
    "build_higher_order",
    "moment",
    "scaled_eval",
    "convolve_pair",
    "kernel_norm",
    "as_bandwidth",
]


def as_bandwidth(h, d=None):
    """Coerce a scalar / sequence / Bandwidth to a tuple of positive floats."""
    if hasattr(h, "__iter__"):
        h = tuple(h)
    values = tuple(float(v) for v in np.atleast_1d(np.asarray(h, dtype=float)))
    if d is not None and len(values) == 1 and d > 1:
        values = values * d
    if d is not None and len(values) != d:
        raise ValueError(f"bandwidth has {len(values)} components, kernel dimension is {d}")
    if not all(np.isfinite(v) and v > 0 for v in values):
        raise ValueError(f"bandwidth components must be positive, got {values}")
    return values


@dataclass(frozen=True, eq=False)
class BaseKernel1D:
    """One-dimensional base kernel ``u`` with unit integral and compact support."""

    name: str
    pp: PiecewisePolynomial
    lipschitz: float
    sup_bound: float

    def __post_init__(self):
        total = self.pp.integral()
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"base kernel {self.name!r} integrates to {total}, not 1")

    @property
    def radius(self):
        return self.pp.radius

    def __call__(self, y):
        return self.pp(y)


def triangular():
    """``u(y) = max(0, 2 - 4|y|)`` on [-1/2, 1/2]."""
    pp = PiecewisePolynomial([-0.5, 0.0, 0.5], [[0.0, 4.0], [2.0, -4.0]])
    return BaseKernel1D("triangular", pp, lipschitz=4.0, sup_bound=2.0)


def biweight():
    """Quartic kernel ``(15/8)(1 - 4y^2)^2`` on [-1/2, 1/2]."""
    c = 15.0 / 8.0
    # (1 - 4y^2)^2 = 1 - 8y^2 + 16y^4 about y = 0, shifted to each left knot
    full = np.array([[1.0, 0.0, -8.0, 0.0, 16.0]]) * c
    rows = _taylor_shift(np.repeat(full, 2, axis=0), np.array([-0.5, 0.0]))
    pp = PiecewisePolynomial([-0.5, 0.0, 0.5], rows)
    return BaseKernel1D("biweight", pp, lipschitz=10.0 / np.sqrt(3.0), sup_bound=c)


BASE_KERNELS = {"triangular": triangular, "biweight": biweight}


def get_base_kernel(name):
    try:
        return BASE_KERNELS[name]()
    except KeyError:
        raise KeyError(
            f"unknown kernel {name!r}; choose from {sorted(BASE_KERNELS)}"
        ) from None


@dataclass(frozen=True, eq=False)
class HigherOrderKernel1D:
    """``u_l(y) = sum_k C(l,k) (-1)^(k+1) u(y/k) / k`` built from a base kernel."""

    base: BaseKernel1D
    order: int
    pp: PiecewisePolynomial

    @property
    def radius(self):
        return self.order * self.base.radius

    @property
    def lipschitz_bound(self):
        """Lipschitz constant inflated by the dilations (not equal to L_K)."""
        return sum(comb(self.order, k) / k**2 for k in range(1, self.order + 1)) * self.base.lipschitz

    def __call__(self, y):
        return self.pp(y)


def build_higher_order(u, l):
    if int(l) != l or l < 1:
        raise ValueError(f"kernel order must be a positive integer, got {l}")
    l = int(l)
    pp = None
    for k in range(1, l + 1):
        term = u.pp.dilate(k).scale(comb(l, k) * (-1) ** (k + 1))
        pp = term if pp is None else pp + term
    return HigherOrderKernel1D(u, l, pp)


def moment(k, j):
    """``int u_l(y) y^j dy`` (exact for piecewise polynomial kernels)."""
    if int(j) != j or j < 0:
        raise ValueError("moment order must be a nonnegative integer")
    return k.pp.moment(int(j))


class SeparableFunction:
    """Product ``prod_i g_i(t_i)`` of one-dimensional piecewise polynomials."""

    def __init__(self, factors):
        self.factors = tuple(factors)
        self._norms = {}
        self._lock = threading.Lock()

    @property
    def d(self):
        return len(self.factors)

    @property
    def radii(self):
        return np.array([f.radius for f in self.factors])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.d == 1 and (t.ndim == 0 or t.shape[-1] != 1):
            t = t[..., None]
        if t.shape[-1] != self.d:
            raise ValueError(f"points must have {self.d} coordinates")
        out = np.ones(t.shape[:-1])
        for i, f in enumerate(self.factors):
            out = out * f(t[..., i])
        return out

    def norm(self, s):
        """L_s norm via tensor factorization, cached per exponent."""
        s = float(s)
        with self._lock:
            if s in self._norms:
                return self._norms[s]
        value = float(np.prod([f.lp_norm(s) for f in self.factors]))
        with self._lock:
            self._norms.setdefault(s, value)
        return value

    def squared(self):
        return SeparableFunction([f.square() for f in self.factors])

    def integral(self):
        return float(np.prod([f.integral() for f in self.factors]))


@dataclass(eq=False)
class ProductKernel:
    """``K(t) = prod_i u_l(t_i)`` in dimension ``d``."""

    factor: HigherOrderKernel1D
    d: int
    _scaled: dict = field(default_factory=dict, repr=False)
    _conv: dict = field(default_factory=dict, repr=False)
    _norms: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("dimension must be a positive integer")
        self.d = int(self.d)

    @classmethod
    def from_name(cls, name="triangular", order=1, d=1):
        return cls(build_higher_order(get_base_kernel(name), order), d)

    @property
    def name(self):
        return self.factor.base.name

    @property
    def order(self):
        return self.factor.order

    @property
    def radius(self):
        """Support radius of each one-dimensional factor."""
        return self.factor.radius

    @property
    def value_at_zero(self):
        return float(self.factor(0.0)) ** self.d

    def describe(self):
        return {"name": self.name, "order": self.order, "d": self.d}

    def __call__(self, t):
        return SeparableFunction([self.factor.pp] * self.d)(t)

    def norm(self, s):
        s = float(s)
        with self._lock:
            if s in self._norms:
                return self._norms[s]
        value = float(self.factor.pp.lp_norm(s) ** self.d)
        with self._lock:
            self._norms.setdefault(s, value)
        return value

    def scaled(self, h):
        h = as_bandwidth(h, self.d)
        with self._lock:
            k = self._scaled.get(h)
        if k is None:
            k = ScaledKernel(self, h)
            with self._lock:
                k = self._scaled.setdefault(h, k)
        return k

    def convolved(self, h, eta):
        h = as_bandwidth(h, self.d)
        eta = as_bandwidth(eta, self.d)
        key = (h, eta)
        with self._lock:
            k = self._conv.get(key)
        if k is None:
            k = ConvKernel(self, h, eta)
            with self._lock:
                k = self._conv.setdefault(key, k)
        return k


class ScaledKernel(SeparableFunction):
    """``K_h(t) = V_h^{-1} K(t / h)``."""

    def __init__(self, kernel, h):
        self.kernel = kernel
        self.h = as_bandwidth(h, kernel.d)
        self.volume = float(np.prod(self.h))
        super().__init__([kernel.factor.pp.dilate(hi) for hi in self.h])

    def norm(self, s):
        """Closed-form scaling ``V_h^(1/s - 1) ||K||_s``."""
        s = float(s)
        if np.isinf(s):
            return self.kernel.norm(s) / self.volume
        return self.volume ** (1.0 / s - 1.0) * self.kernel.norm(s)

    def numerical_norm(self, s):
        return SeparableFunction.norm(self, s)


class ConvKernel(SeparableFunction):
    """``K_h * K_eta`` stored as d exact one-dimensional convolutions."""

    def __init__(self, kernel, h, eta):
        self.kernel = kernel
        self.h = as_bandwidth(h, kernel.d)
        self.eta = as_bandwidth(eta, kernel.d)
        pp = kernel.factor.pp
        super().__init__(
            [pp.dilate(a).convolve(pp.dilate(b)) for a, b in zip(self.h, self.eta)]
        )


def scaled_eval(K, h, t):
    """``V_h^{-1} K(t / h)`` at a point (or array of points)."""
    return K.scaled(h)(t)


def convolve_pair(K, h, eta):
    return K.convolved(h, eta)


def kernel_norm(k, s):
    if float(s) < 1:
        raise ValueError("norm exponent must be >= 1")
    return k.norm(s)
