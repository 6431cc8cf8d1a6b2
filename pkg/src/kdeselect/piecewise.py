"""Compactly supported piecewise polynomials on the real line.

Every kernel in this package (base kernels, their higher-order
combinations, dilations, pairwise convolutions and squares) is a
piecewise polynomial.  Keeping them in this closed form makes norms,
moments and convolutions exact up to floating point instead of being
tied to a sampling resolution.
"""

from math import comb

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import integrate

__all__ = ["PiecewisePolynomial"]

_GL = {}


def gauss_legendre01(k):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if k not in _GL:
        x, w = np.polynomial.legendre.leggauss(k)
        _GL[k] = ((x + 1.0) / 2.0, w / 2.0)
    return _GL[k]


def _taylor_shift(coeffs, delta):
    """Re-express rows of local coefficients about ``origin + delta``."""
    coeffs = np.atleast_2d(coeffs)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), coeffs.shape[:1])
    deg = coeffs.shape[1] - 1
    out = np.zeros_like(coeffs)
    for j in range(deg + 1):
        for k in range(j, deg + 1):
            out[:, j] += coeffs[:, k] * comb(k, j) * delta ** (k - j)
    return out


def _merge_knots(values, rel_tol=1e-12):
    values = np.unique(np.asarray(values, dtype=float))
    if values.size < 2:
        return values
    tol = rel_tol * max(1.0, float(np.max(np.abs(values))))
    keep = np.concatenate(([True], np.diff(values) > tol))
    merged = values[keep]
    # the right end must stay exact so that the support is not shrunk
    merged[-1] = values[-1]
    return merged


def _real_roots(c, width):
    c = np.trim_zeros(np.asarray(c, dtype=float), "b")
    if c.size < 2:
        return np.empty(0)
    roots = npoly.polyroots(c)
    scale = max(width, 1e-300)
    real = roots[np.abs(roots.imag) <= 1e-9 * scale].real
    tol = 1e-12 * scale
    return np.sort(real[(real > tol) & (real < width - tol)])


class PiecewisePolynomial:
    """Piecewise polynomial that vanishes outside ``[knots[0], knots[-1])``.

    Parameters
    ----------
    knots : array_like, shape (P + 1,)
        Strictly increasing breakpoints.
    coeffs : array_like, shape (P, D + 1)
        Row ``p`` holds the coefficients (lowest degree first) of the
        polynomial on ``[knots[p], knots[p + 1])`` in the local variable
        ``x - knots[p]``.
    """

    __slots__ = ("knots", "coeffs")

    def __init__(self, knots, coeffs):
        knots = np.array(knots, dtype=float)
        coeffs = np.array(np.atleast_2d(coeffs), dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("need at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if coeffs.shape[0] != knots.size - 1:
            raise ValueError(
                f"expected {knots.size - 1} coefficient rows, got {coeffs.shape[0]}"
            )
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(coeffs))):
            raise ValueError("knots and coefficients must be finite")
        knots.flags.writeable = False
        coeffs.flags.writeable = False
        self.knots = knots
        self.coeffs = coeffs

    def __repr__(self):
        return (
            f"PiecewisePolynomial(pieces={self.n_pieces}, degree={self.degree}, "
            f"support=[{self.knots[0]:.6g}, {self.knots[-1]:.6g}])"
        )

    @property
    def n_pieces(self):
        return self.coeffs.shape[0]

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    @property
    def support(self):
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def radius(self):
        """Smallest r with the support inside [-r, r]."""
        return float(max(-self.knots[0], self.knots[-1]))

    @property
    def widths(self):
        return np.diff(self.knots)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.knots, x, side="right") - 1
        inside = (idx >= 0) & (idx < self.n_pieces)
        idx = np.clip(idx, 0, self.n_pieces - 1)
        loc = x - self.knots[idx]
        val = self.coeffs[idx, -1]
        for k in range(self.degree - 1, -1, -1):
            val = val * loc + self.coeffs[idx, k]
        return np.where(inside, val, 0.0)

    def left_taylor(self, y, order):
        """Taylor coefficients ``p^(j)(y-) / j!`` for ``j = 0..order``.

        Uses the piece that contains points just below ``y`` (its
        polynomial is extrapolated when ``y`` equals the right knot).
        Returns zeros when ``y-`` lies outside the support.
        """
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.knots, y, side="left") - 1
        inside = (idx >= 0) & (idx < self.n_pieces)
        idx = np.clip(idx, 0, self.n_pieces - 1)
        loc = y - self.knots[idx]
        return self._taylor_rows(idx, loc, order) * inside[..., None]

    def piece_taylor(self, piece, y, order):
        """Taylor coefficients at ``y`` of the polynomial of a given piece.

        ``piece`` may be -1 or ``n_pieces`` to denote the zero polynomial
        outside the support.
        """
        if piece < 0 or piece >= self.n_pieces:
            return np.zeros(np.shape(y) + (order + 1,))
        y = np.asarray(y, dtype=float)
        idx = np.full(y.shape, piece, dtype=int)
        return self._taylor_rows(idx, y - self.knots[piece], order)

    def _taylor_rows(self, idx, loc, order):
        out = np.zeros(np.shape(loc) + (order + 1,))
        c = self.coeffs
        for j in range(min(order, self.degree) + 1):
            dj = np.zeros(np.shape(loc))
            for k in range(self.degree, j - 1, -1):
                dj = dj * loc + c[idx, k] * comb(k, j)
            out[..., j] = dj
        return out

    # -- algebra ------------------------------------------------------------

    def dilate(self, a):
        """Return ``y -> p(y / a) / a`` (mass-preserving dilation)."""
        a = float(a)
        if not a > 0:
            raise ValueError("dilation factor must be positive")
        powers = a ** -(np.arange(self.degree + 1) + 1.0)
        return PiecewisePolynomial(self.knots * a, self.coeffs * powers)

    def scale(self, c):
        return PiecewisePolynomial(self.knots, self.coeffs * float(c))

    def refine(self, knots, degree=None):
        """Same function expressed on ``knots`` (a superset of the support knots)."""
        knots = np.asarray(knots, dtype=float)
        degree = self.degree if degree is None else max(degree, self.degree)
        mids = 0.5 * (knots[:-1] + knots[1:])
        idx = np.searchsorted(self.knots, mids, side="right") - 1
        inside = (idx >= 0) & (idx < self.n_pieces)
        idx = np.clip(idx, 0, self.n_pieces - 1)
        rows = _taylor_shift(self.coeffs[idx], knots[:-1] - self.knots[idx])
        rows = rows * inside[:, None]
        out = np.zeros((knots.size - 1, degree + 1))
        out[:, : self.degree + 1] = rows
        return PiecewisePolynomial(knots, out)

    def _common(self, other):
        knots = _merge_knots(np.concatenate([self.knots, other.knots]))
        deg = max(self.degree, other.degree)
        return self.refine(knots, deg), other.refine(knots, deg)

    def __add__(self, other):
        if not isinstance(other, PiecewisePolynomial):
            return NotImplemented
        a, b = self._common(other)
        return PiecewisePolynomial(a.knots, a.coeffs + b.coeffs)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if not isinstance(other, PiecewisePolynomial):
            return NotImplemented
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, PiecewisePolynomial):
            a, b = self._common(other)
            rows = np.zeros((a.n_pieces, 2 * a.degree + 1))
            for i, (x, y) in enumerate(zip(a.coeffs, b.coeffs)):
                prod = npoly.polymul(x, y)
                rows[i, : prod.size] = prod
            return PiecewisePolynomial(a.knots, rows)
        return self.scale(other)

    __rmul__ = __mul__

    def square(self):
        return self * self

    # -- integrals ----------------------------------------------------------

    def integral(self):
        w = self.widths
        k = np.arange(self.degree + 1)
        return float(np.sum(self.coeffs * w[:, None] ** (k + 1) / (k + 1)))

    def moment(self, j):
        """Exact ``int p(y) y**j dy``."""
        if j < 0:
            raise ValueError("moment order must be nonnegative")
        x, w = gauss_legendre01((self.degree + j) // 2 + 1)
        widths = self.widths
        pts = self.knots[:-1, None] + widths[:, None] * x[None, :]
        vals = self(pts) * pts**j
        return float(np.sum(vals * w[None, :] * widths[:, None]))

    def lp_norm(self, s):
        """``(int |p|^s)^(1/s)``; ``s = inf`` gives the sup norm."""
        s = float(s)
        if np.isinf(s):
            return self.sup_norm()
        if s < 1:
            raise ValueError("norm exponent must be >= 1")
        integer = s.is_integer()
        total = 0.0
        for c, width in zip(self.coeffs, self.widths):
            if not np.any(c):
                continue
            edges = np.concatenate(([0.0], _real_roots(c, width), [width]))
            for a, b in zip(edges[:-1], edges[1:]):
                if b <= a:
                    continue
                if integer:
                    x, w = gauss_legendre01(int(np.ceil((self.degree * s + 1) / 2)) + 1)
                    pts = a + (b - a) * x
                    total += (b - a) * float(np.sum(w * np.abs(npoly.polyval(pts, c)) ** s))
                else:
                    val, _ = integrate.quad(
                        lambda t: abs(npoly.polyval(t, c)) ** s,
                        a, b, epsabs=1e-15, epsrel=1e-13, limit=200,
                    )
                    total += val
        return total ** (1.0 / s)

    def sup_norm(self):
        best = 0.0
        for c, width in zip(self.coeffs, self.widths):
            crit = _real_roots(npoly.polyder(c), width) if self.degree else np.empty(0)
            pts = np.concatenate(([0.0, width], crit))
            best = max(best, float(np.max(np.abs(npoly.polyval(pts, c)))))
        return best

    # -- convolution --------------------------------------------------------

    def convolve(self, other):
        """Exact ``(p * q)(z) = int p(y) q(z - y) dy`` as a piecewise polynomial.

        On every interval between sums of knots the convolution is a
        polynomial of degree ``deg p + deg q + 1``; it is recovered by
        interpolation from exactly integrated values at Chebyshev points.
        """
        knots = _merge_knots((self.knots[:, None] + other.knots[None, :]).ravel())
        deg = self.degree + other.degree + 1
        m = deg + 1
        u = 0.5 - 0.5 * np.cos((2 * np.arange(m) + 1) * np.pi / (2 * m))
        widths = np.diff(knots)
        # near-coincident knot sums leave very short pieces; fitting on the
        # piece itself would give coefficients that blow up away from it, so
        # each piece's polynomial is continued and fitted on a wider window
        window = np.maximum(widths, 0.25 * widths.max())
        z = knots[:-1, None] + window[:, None] * u[None, :]
        mid = 0.5 * (knots[:-1] + knots[1:])
        vals = self._conv_values(other, z, mid)
        vander = np.vander(u, m, increasing=True)
        a = np.linalg.solve(vander, vals.T).T
        coeffs = a / window[:, None] ** np.arange(m)
        return PiecewisePolynomial(knots, coeffs)

    def _conv_values(self, other, z, mid):
        """Polynomial continuation of ``p * q`` from each ``mid`` to ``z[i]``.

        The active piece pairs and their integration limits are the ones in
        force at ``mid[i]``; they are then held fixed across row ``z[i]``.
        """
        gx, gw = gauss_legendre01((self.degree + other.degree) // 2 + 1)
        q_lo = other.knots[:-1]
        q_hi = other.knots[1:]
        zc = mid[:, None]
        out = np.zeros(z.shape)
        for p in range(self.n_pieces):
            a, b = self.knots[p], self.knots[p + 1]
            lo_c = np.maximum(a, zc - q_hi[None, :])
            hi_c = np.minimum(b, zc - q_lo[None, :])
            active = hi_c > lo_c
            # each limit is either a knot of p or z minus a knot of q
            lo_fixed = a >= zc - q_hi[None, :]
            hi_fixed = b <= zc - q_lo[None, :]
            zz = z[:, None, :]
            lo = np.where(lo_fixed[..., None], a, zz - q_hi[None, :, None])
            hi = np.where(hi_fixed[..., None], b, zz - q_lo[None, :, None])
            span = (hi - lo) * active[..., None]
            y = lo[..., None] + span[..., None] * gx
            pv = npoly.polyval(y - a, self.coeffs[p])
            loc_q = zz[..., None] - y - q_lo[None, :, None, None]
            qv = np.zeros_like(loc_q)
            for k in range(other.degree, -1, -1):
                qv = qv * loc_q + other.coeffs[None, :, k, None, None]
            out += np.sum(np.sum(pv * qv * gw, axis=-1) * span, axis=1)
        return out
