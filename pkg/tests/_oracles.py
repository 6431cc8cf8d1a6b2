"""Independent reference implementations built straight from the definitions.

Nothing here uses the package's piecewise-polynomial machinery: kernels
are plain Python functions, convolutions and norms are adaptive
quadrature, and estimators are naive double loops.
"""

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate

warnings.filterwarnings("ignore", category=integrate.IntegrationWarning, module=__name__)


def tri(y):
    return max(0.0, 2.0 - 4.0 * abs(y))


def u_l(y, l, u=tri):
    return sum(math.comb(l, k) * (-1) ** (k + 1) * u(y / k) / k for k in range(1, l + 1))


def kernel_knots(l):
    """Break points of the order-l triangular kernel."""
    return sorted({sgn * k * c for k in range(1, l + 1) for c in (0.0, 0.5) for sgn in (-1, 1)})


def k_h(y, h, l=1):
    return u_l(y / h, l) / h


@lru_cache(maxsize=None)
def _conv_cached(x, h, eta, l):
    kh = kernel_knots(l)
    pts = sorted({x - h * a for a in kh} | {eta * b for b in kh})
    lo, hi = min(pts), max(pts)
    inner = [p for p in pts if lo < p < hi]
    val, _ = integrate.quad(
        lambda z: k_h(x - z, h, l) * k_h(z, eta, l), lo, hi,
        points=inner or None, epsabs=1e-14, epsrel=1e-13, limit=200,
    )
    return val


def conv(x, h, eta, l=1):
    """``(K_h * K_eta)(x)`` in one dimension by adaptive quadrature."""
    return _conv_cached(round(float(x), 15), float(h), float(eta), int(l))


def conv_knots(h, eta, l=1):
    kn = kernel_knots(l)
    return sorted({h * a + eta * b for a in kn for b in kn})


def norm_kh(h, s, l=1):
    kn = [h * a for a in kernel_knots(l)]
    val, _ = integrate.quad(lambda y: abs(k_h(y, h, l)) ** s, kn[0], kn[-1],
                            points=kn[1:-1], epsabs=1e-14, epsrel=1e-13, limit=200)
    return val ** (1.0 / s)


def norm_conv(h, eta, s, l=1):
    kn = conv_knots(h, eta, l)
    val, _ = integrate.quad(lambda y: abs(conv(y, h, eta, l)) ** s, kn[0], kn[-1],
                            points=kn[1:-1], epsabs=1e-14, epsrel=1e-12, limit=400)
    return val ** (1.0 / s)


def kde_at(nodes, xs, fn):
    """Naive ``n^-1 sum_i fn(t - X_i)`` at each node."""
    out = []
    for t in nodes:
        acc = 0.0
        for x in xs:
            acc += fn(t - x)
        out.append(acc / len(xs))
    return np.array(out)


def grid_norm(values, weight, s):
    return (np.sum(np.abs(values) ** s) * weight) ** (1.0 / s)


def rho(norm_s, norm_2, s, n):
    if s < 2:
        return 4.0 * n ** (1.0 / s - 1.0) * norm_s
    return norm_2 / math.sqrt(n)


def rho_hat(u_fn, xs, nodes, weight, s, norm_s):
    n = len(xs)
    sq = kde_at(nodes, xs, lambda y: u_fn(y) ** 2)
    inner = (np.sum(sq ** (s / 2.0)) * weight) ** (1.0 / s)
    c_s = 15.0 * s / math.log(s)
    return c_s * (inner / math.sqrt(n) + 2.0 * n ** (1.0 / s - 1.0) * norm_s)


def g(s, n, norm_s, norm_2, u_fn=None, xs=None, fine_nodes=None, fine_weight=None):
    if s < 2:
        return 32.0 * rho(norm_s, norm_2, s, n)
    if s == 2:
        return 25.0 / 3.0 * rho(norm_s, norm_2, s, n)
    r = rho_hat(u_fn, xs, fine_nodes, fine_weight, s, norm_s)
    return 32.0 * max(r, norm_2 / math.sqrt(n))


def selection_oracle(xs, H, s, nodes, weight, fine_nodes=None, fine_weight=None, pairing="displayed", l=1):
    """Majorant table and criterion values from the displayed formulas.

    ``pairing="displayed"``: ``m(h, eta) = g(K_h) + g(K_h * K_eta)``;
    ``pairing="consistent"``: ``m(h, eta) = g(K_eta) + g(K_h * K_eta)``.
    Both use ``m*(h) = max_eta m(eta, h)``.
    """
    n = len(xs)
    k = len(H)

    def g_single(h):
        return g(s, n, norm_kh(h, s, l), norm_kh(h, 2.0, l),
                 lambda y: k_h(y, h, l), xs, fine_nodes, fine_weight)

    def g_conv(h, eta):
        return g(s, n, norm_conv(h, eta, s, l), norm_conv(h, eta, 2.0, l),
                 lambda y: conv(y, h, eta, l), xs, fine_nodes, fine_weight)

    gs = np.array([g_single(h) for h in H])
    gp = np.array([[g_conv(H[i], H[j]) for j in range(k)] for i in range(k)])
    if pairing == "displayed":
        m = np.array([[gs[i] + gp[i, j] for j in range(k)] for i in range(k)])
    else:
        m = np.array([[gs[j] + gp[i, j] for j in range(k)] for i in range(k)])
    m_star = np.array([max(m[j, i] for j in range(k)) for i in range(k)])
    f_eta = [kde_at(nodes, xs, lambda y, e=e: k_h(y, e, l)) for e in H]
    R = []
    for i, h in enumerate(H):
        sup = 0.0
        for j, eta in enumerate(H):
            aux = kde_at(nodes, xs, lambda y: conv(y, h, eta, l))
            sup = max(sup, max(grid_norm(aux - f_eta[j], weight, s) - m[i, j], 0.0))
        R.append(sup + m_star[i])
    return {"g_single": gs, "g_pair": gp, "m": m, "m_star": m_star, "R": np.array(R)}
