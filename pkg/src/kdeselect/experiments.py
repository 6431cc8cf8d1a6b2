"""Test densities, seeded Monte Carlo risk studies and rate regression.

Every replication draws from its own Philox substream keyed by
``(seed, stream, replication)``, so results do not depend on the order
in which replications run or on the number of worker threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .estimators import LatticeSummation, Sample, convolve_grid_function, kde_values, smoothed_truth
from .kernels import as_bandwidth
from .numerics import GridFunction, grid_with_spacing, loglog_slope
from .selection import BandwidthGrid, MajorantConfig, select

__all__ = [
    "TestDensity",
    "RiskReport",
    "StochasticErrorProbe",
    "MassLeakageError",
    "density_catalog",
    "get_density",
    "replication_rng",
    "study_grid",
    "mc_risk",
    "variance_identity_check",
    "stochastic_error_probe",
    "oracle_ratio_study",
    "gamma_rate",
    "alpha_bar",
    "phi",
    "rate_study",
    "rate_grid",
    "grid_diagnostics",
    "rho_population",
    "default_bandwidth_grid",
    "LEAKAGE_TOL",
]

LEAKAGE_TOL = 1e-2
_STREAMS = {"sample": 0, "select": 1, "fixed": 2, "truth": 3, "variance": 4, "probe": 5}


class MassLeakageError(RuntimeError):
    """An estimate lost more than ``LEAKAGE_TOL`` of its mass to the box edge."""


# -- densities ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestDensity:
    """A density with a sampler, a support box and a declared smoothness.

    ``smoothness`` is documentation-grade: the smoothness index the
    density is declared to have, not something verified here.
    """

    __test__ = False

    name: str
    d: int
    pdf: object
    sampler: object
    lo: tuple
    hi: tuple
    smoothness: float
    mean: tuple = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return self.pdf(x)

    def sample(self, rng, n):
        return np.asarray(self.sampler(rng, n), dtype=float).reshape(n, self.d)

    def effective_smoothness(self, order):
        """``min(declared smoothness, kernel order)``."""
        return float(min(self.smoothness, order))

    def on_grid(self, grid):
        return GridFunction.from_callable(grid, self)

    def mass(self, nodes_per_dim=4000):
        """Midpoint-rule integral over the support box."""
        m = int(round(nodes_per_dim ** (1.0 / self.d))) if self.d > 1 else nodes_per_dim
        grid = grid_with_spacing(self.lo, self.hi, (np.subtract(self.hi, self.lo)) / m)
        return self.on_grid(grid).integral()


def _trunc_normal(loc, scale, a, b):
    return stats.truncnorm((a - loc) / scale, (b - loc) / scale, loc=loc, scale=scale)


def _gaussian_1d(scale=1.0, bound=5.0):
    dist = _trunc_normal(0.0, scale, -bound, bound)
    return dist.pdf, lambda u: dist.ppf(u)


def _mixture_1d(bound=4.0):
    comps = [_trunc_normal(-1.0, 0.5, -bound, bound), _trunc_normal(1.0, 0.5, -bound, bound)]
    # both components keep the same mass inside the symmetric box
    return (
        lambda x: 0.5 * (comps[0].pdf(x) + comps[1].pdf(x)),
        lambda u, pick: np.where(pick, comps[1].ppf(u), comps[0].ppf(u)),
    )


def _bump_cdf(x):
    x = np.clip(x, -1.0, 1.0)
    return 0.5 + (15.0 / 16.0) * (x - 2.0 * x**3 / 3.0 + x**5 / 5.0)


def _bump_inverse(u, tol=1e-10):
    """Invert the bump CDF by bisection to within ``tol``."""
    lo = np.full_like(u, -1.0)
    hi = np.full_like(u, 1.0)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        left = _bump_cdf(mid) < u
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def density_catalog():
    """The built-in test densities."""
    g_pdf, g_ppf = _gaussian_1d()
    m_pdf, m_ppf = _mixture_1d()
    g2_pdf, g2_ppf = _gaussian_1d(scale=0.5)

    out = [
        TestDensity(
            "gaussian", 1,
            lambda x: g_pdf(x[..., 0]),
            lambda rng, n: g_ppf(rng.random(n)),
            (-5.0,), (5.0,), math.inf, (0.0,),
        ),
        TestDensity(
            "mixture", 1,
            lambda x: m_pdf(x[..., 0]),
            lambda rng, n: m_ppf(rng.random(n), rng.random(n) < 0.5),
            (-4.0,), (4.0,), math.inf, (0.0,),
        ),
        TestDensity(
            "bump", 1,
            lambda x: np.where(np.abs(x[..., 0]) < 1, 15.0 / 16.0 * (1 - x[..., 0] ** 2) ** 2, 0.0),
            lambda rng, n: _bump_inverse(rng.random(n)),
            (-1.0,), (1.0,), 2.0, (0.0,),
        ),
        TestDensity(
            "gaussian-mixture-2d", 2,
            lambda x: g_pdf(x[..., 0]) * m_pdf(x[..., 1]),
            lambda rng, n: np.column_stack(
                [g_ppf(rng.random(n)), m_ppf(rng.random(n), rng.random(n) < 0.5)]
            ),
            (-5.0, -4.0), (5.0, 4.0), math.inf, (0.0, 0.0),
        ),
        TestDensity(
            "anisotropic-gaussian-2d", 2,
            lambda x: g_pdf(x[..., 0]) * g2_pdf(x[..., 1]),
            lambda rng, n: np.column_stack([g_ppf(rng.random(n)), g2_ppf(rng.random(n))]),
            (-5.0, -5.0), (5.0, 5.0), math.inf, (0.0, 0.0),
        ),
    ]
    return out


def get_density(name):
    for dens in density_catalog():
        if dens.name == name:
            return dens
    names = [d.name for d in density_catalog()]
    raise KeyError(f"unknown density {name!r}; choose from {names}")


def replication_rng(seed, rep, stream="sample"):
    """Independent Philox generator for one replication."""
    ss = np.random.SeedSequence([int(seed), _STREAMS[stream], int(rep)])
    return np.random.Generator(np.random.Philox(ss))


# -- grids and helpers --------------------------------------------------------


def default_bandwidth_grid(d=1, h_min=0.02, h_max=1.0, ratio=math.sqrt(2.0)):
    """Geometric grid used when a study does not specify one."""
    return BandwidthGrid.geometric((h_min,) * d, (h_max,) * d, ratio)


def study_grid(density, K, h_max, h_min, grid_res=4):
    """Fixed evaluation grid for a study.

    The density's support box inflated by ``2 r h_max * 1.05`` contains
    every ``K_h * K_eta`` placed at any possible observation.
    """
    pad = 2.0 * K.radius * np.asarray(h_max, dtype=float) * 1.05
    lo = np.asarray(density.lo) - pad
    hi = np.asarray(density.hi) + pad
    return grid_with_spacing(lo, hi, float(np.min(h_min)) / grid_res)


def _resolve_method(method, d):
    if method == "auto":
        return "lattice" if d == 1 else "direct"
    return method


def _pmap(fn, items, threads):
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _error_norm(values, truth, grid, s):
    diff = np.abs(values - truth)
    if np.isinf(s):
        return float(diff.max())
    return float(np.sum(diff**s) * grid.weight) ** (1.0 / s)


def _check_leakage(mass, context):
    if abs(mass - 1.0) > LEAKAGE_TOL:
        raise MassLeakageError(
            f"{context}: estimate integrates to {mass:.6g} (tolerance {LEAKAGE_TOL}); "
            "enlarge the evaluation box or lower h_max"
        )


def _risk(errors, q):
    """``(mean e^q)^(1/q)`` and a delta-method standard error."""
    e = np.asarray(errors, dtype=float)
    mq = float(np.mean(e**q))
    risk = mq ** (1.0 / q)
    if e.size < 2:
        return risk, math.nan
    se_mq = float(np.std(e**q, ddof=1)) / math.sqrt(e.size)
    se = (risk / (q * mq)) * se_mq if mq > 0 else 0.0
    return risk, se


# -- reports ------------------------------------------------------------------


@dataclass(eq=False)
class RiskReport:
    """Monte Carlo study output.

    ``rows`` holds one record per sample size; each record carries the
    per-replication errors of the selected estimator and, when computed,
    of every fixed bandwidth.
    """

    kind: str
    config: dict
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, "config": self.config, "rows": self.rows, "summary": self.summary}


@dataclass(eq=False)
class StochasticErrorProbe:
    """Monte Carlo mean and standard error of ``xi_h`` at every node."""

    grid: object
    bandwidths: tuple
    mean: dict
    stderr: dict
    norms: dict
    eta: tuple = None


# -- Monte Carlo risk ---------------------------------------------------------


def _one_replication(density, K, n, seed, rep, grid, truth, s, estimator, H, h, cfg_kw, method, spectra):
    x = density.sample(replication_rng(seed, rep), n)
    if estimator == "truth":
        return {"error": 0.0, "h": None, "mass": 1.0, "fixed": None}
    if estimator == "fixed":
        hh = as_bandwidth(h, K.d)
        engine = None
        if method == "lattice":
            engine = LatticeSummation(x[:, 0], grid, K.scaled(hh).radii[0], spectra)
        vals = kde_values(x, K.scaled(hh), grid, method=method, engine=engine, key=("K", hh))
        mass = float(vals.sum() * grid.weight)
        _check_leakage(mass, f"replication {rep}")
        return {"error": _error_norm(vals, truth, grid, s), "h": list(hh), "mass": mass, "fixed": None}
    cfg = MajorantConfig(s=s, n=n, **cfg_kw)
    res = select(x, K, H, cfg, grid=grid, method=method, prune=True, spectra=spectra)
    mass = res.estimate.mass
    _check_leakage(mass, f"replication {rep}")
    fixed = [_error_norm(res.fits[hh], truth, grid, s) for hh in res.bandwidths]
    return {
        "error": _error_norm(res.estimate.values, truth, grid, s),
        "h": list(res.h_hat),
        "mass": mass,
        "fixed": fixed,
        "sup_term": float(res.sup_term[res.index]),
    }


def mc_risk(
    density,
    K,
    n,
    reps,
    seed,
    estimator="select",
    H=None,
    h=None,
    s=2.0,
    q=1.0,
    grid=None,
    grid_res=4,
    method="auto",
    threads=1,
    pairing="consistent",
    spectra=None,
):
    """Monte Carlo ``L_s`` risk of one estimator at one sample size.

    Parameters
    ----------
    estimator : {"select", "fixed", "truth"}
        Data-driven bandwidth over ``H``, a fixed bandwidth ``h``, or the
        true density itself (a plumbing check with zero risk).

    Returns
    -------
    dict
        ``risk``, ``se``, per-replication ``errors``, selected bandwidths,
        masses and, for ``"select"``, the per-replication errors of every
        fixed ``h`` in ``H``.
    """
    if estimator not in ("select", "fixed", "truth"):
        raise ValueError(f"estimator must be 'select', 'fixed' or 'truth', got {estimator!r}")
    if int(reps) != reps or reps < 1:
        raise ValueError("reps must be a positive integer")
    if estimator == "select" and H is None:
        H = default_bandwidth_grid(density.d)
    if estimator == "fixed" and h is None:
        raise ValueError("a fixed bandwidth h is required")
    if H is not None and not isinstance(H, BandwidthGrid):
        H = BandwidthGrid.from_nodes(H)
    hs = [as_bandwidth(h, K.d)] if estimator == "fixed" else list(H.members) if H else [(1.0,) * K.d]
    if grid is None:
        h_max = np.max(np.array(hs), axis=0)
        h_min = np.min(np.array(hs))
        grid = study_grid(density, K, h_max, h_min, grid_res)
    method = _resolve_method(method, K.d)
    truth = density.on_grid(grid).values
    spectra = {} if spectra is None else spectra
    out = _pmap(
        lambda r: _one_replication(
            density, K, n, seed, r, grid, truth, s, estimator, H, h, {"pairing": pairing}, method, spectra
        ),
        range(int(reps)),
        threads,
    )
    errors = [o["error"] for o in out]
    risk, se = _risk(errors, q)
    row = {
        "n": int(n),
        "estimator": estimator,
        "risk": risk,
        "se": se,
        "errors": errors,
        "selected": [o["h"] for o in out],
        "mass": [o["mass"] for o in out],
        "max_leakage": max(abs(o["mass"] - 1.0) for o in out),
    }
    if estimator == "select":
        fixed = np.array([o["fixed"] for o in out])
        fixed_risk = [_risk(fixed[:, j], q) for j in range(fixed.shape[1])]
        row["fixed_errors"] = fixed.T.tolist()
        row["fixed_risk"] = [r for r, _ in fixed_risk]
        row["fixed_se"] = [e for _, e in fixed_risk]
        row["sup_term"] = [o["sup_term"] for o in out]
        best = int(np.argmin(row["fixed_risk"]))
        row["oracle_sanity"] = bool(risk >= fixed_risk[best][0] - 2 * (fixed_risk[best][1] if reps > 1 else 0.0))
    return row


# -- variance identity and stochastic error ----------------------------------


def _fine_grid(density, K, h, grid_res):
    hh = np.asarray(h)
    return study_grid(density, K, hh / 2.0, float(hh.min()), grid_res)


def variance_identity_check(density, K, h, n, reps, seed, grid_res=16, method="auto", threads=1):
    """Compare the Monte Carlo ``E||xi_h||_2^2`` with its closed form.

    The closed form is ``n^-1 [V_h^-1 ||K||_2^2 - ||K_h * f||_2^2]``.
    """
    h = as_bandwidth(h, K.d)
    grid = _fine_grid(density, K, h, grid_res)
    method = _resolve_method(method, K.d)
    f = density.on_grid(grid)
    mean_fn = smoothed_truth(f, K, h).values
    spectra = {}

    def one(r):
        x = density.sample(replication_rng(seed, r, "variance"), n)
        engine = LatticeSummation(x[:, 0], grid, K.scaled(h).radii[0], spectra) if method == "lattice" else None
        vals = kde_values(x, K.scaled(h), grid, method=method, engine=engine, key=("K", h))
        return float(np.sum((vals - mean_fn) ** 2) * grid.weight)

    sq = np.array(_pmap(one, range(int(reps)), threads))
    vol = float(np.prod(h))
    smooth_sq = float(np.sum(mean_fn**2) * grid.weight)
    predicted = (K.norm(2.0) ** 2 / vol - smooth_sq) / n
    mc = float(sq.mean())
    norm_mean = float(np.sqrt(sq).mean())
    lower = 0.5 * K.norm(2.0) * (n * vol) ** -0.5
    return {
        "h": list(h),
        "n": int(n),
        "reps": int(reps),
        "mc_mean_sq": mc,
        "mc_se_sq": float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else math.nan,
        "predicted_sq": predicted,
        "relative_error": abs(mc - predicted) / predicted,
        "mean_norm": norm_mean,
        "lower_bound": lower,
        "lower_bound_holds": bool(norm_mean >= lower),
    }


def stochastic_error_probe(density, K, hs, n, reps, seed, eta=None, grid_res=8, method="auto"):
    """Monte Carlo mean of ``xi_h`` (or ``xi_{h,eta}`` when ``eta`` is given)."""
    hs = [as_bandwidth(h, K.d) for h in hs]
    eta = None if eta is None else as_bandwidth(eta, K.d)
    top = np.max(hs, axis=0) + (0 if eta is None else np.asarray(eta))
    grid = study_grid(density, K, top, float(np.min(hs)), grid_res)
    method = _resolve_method(method, K.d)
    f = density.on_grid(grid)
    weights = {h: (K.scaled(h) if eta is None else K.convolved(h, eta)) for h in hs}
    means = {h: (smoothed_truth(f, K, h) if eta is None else smoothed_truth(smoothed_truth(f, K, h), K, eta)).values for h in hs}
    acc = {h: np.zeros(grid.shape) for h in hs}
    acc2 = {h: np.zeros(grid.shape) for h in hs}
    norms = {h: [] for h in hs}
    for r in range(int(reps)):
        x = density.sample(replication_rng(seed, r, "probe"), n)
        for h in hs:
            xi = kde_values(x, weights[h], grid, method=method) - means[h]
            acc[h] += xi
            acc2[h] += xi * xi
            norms[h].append(float(np.sqrt(np.sum(xi * xi) * grid.weight)))
    mean = {h: acc[h] / reps for h in hs}
    var = {h: np.maximum(acc2[h] / reps - mean[h] ** 2, 0.0) * reps / max(reps - 1, 1) for h in hs}
    se = {h: np.sqrt(var[h] / reps) for h in hs}
    return StochasticErrorProbe(grid, tuple(hs), mean, se, norms, eta)


def rho_population(U, density, cfg, spacing=None):
    """Majorant ``rho_s(U)`` for ``s > 2`` with the true density.

    ``c_s {n^-1/2 (int [int U^2(t - x) f(x) dx]^(s/2) dt)^(1/s) + 2 n^(1/s-1) ||U||_s}``,
    both integrals by the midpoint rule on the density's box inflated by
    the support of ``U``.
    """
    if cfg.s <= 2:
        raise ValueError("rho_population is the s > 2 majorant")
    radii = np.asarray(U.radii)
    if spacing is None:
        spacing = float(radii.min()) / 32.0
    grid = grid_with_spacing(np.asarray(density.lo) - 1.05 * radii, np.asarray(density.hi) + 1.05 * radii, spacing)
    mean_sq = np.maximum(convolve_grid_function(density.on_grid(grid), U.squared()).values, 0.0)
    inner = float(np.sum(mean_sq ** (cfg.s / 2.0)) * grid.weight) ** (1.0 / cfg.s)
    n = cfg.n
    return cfg.c_s * (n**-0.5 * inner + 2.0 * n ** (1.0 / cfg.s - 1.0) * U.norm(cfg.s))


# -- oracle ratio -------------------------------------------------------------


def oracle_ratio_study(density, K, n, reps, seed, H=None, s=2.0, q=1.0, grid_res=4,
                       method="auto", threads=1, pairing="consistent"):
    """Per-replication ratio of the selected error to the best fixed error."""
    if H is None:
        H = default_bandwidth_grid(density.d)
    if not isinstance(H, BandwidthGrid):
        H = BandwidthGrid.from_nodes(H)
    row = mc_risk(density, K, n, reps, seed, "select", H=H, s=s, q=q, grid_res=grid_res,
                  method=method, threads=threads, pairing=pairing)
    fixed = np.array(row["fixed_errors"])
    best = fixed.min(axis=0)
    if np.any(best <= 0):
        raise ValueError("a fixed-bandwidth error is zero; the ratio is undefined")
    ratios = np.asarray(row["errors"]) / best
    row["ratios"] = ratios.tolist()
    summary = {
        "median_ratio": float(np.median(ratios)),
        "p90_ratio": float(np.percentile(ratios, 90)),
        "theory_constant": 1.0 + 3.0 * K.norm(1.0),
        "oracle_sanity": row["oracle_sanity"],
        "zero_sup_fraction": float(np.mean(np.asarray(row["sup_term"]) == 0.0)),
    }
    config = _config_echo("oracle-ratio", density, K, s, q, [n], reps, seed, H, pairing, grid_res)
    return RiskReport("oracle-ratio", config, [row], summary)


def _config_echo(kind, density, K, s, q, n_list, reps, seed, H, pairing, grid_res, extra=None):
    cfg = {
        "kind": kind,
        "density": density.name,
        "kernel": K.describe(),
        "s": float(s),
        "q": float(q),
        "n_list": [int(v) for v in n_list],
        "reps": int(reps),
        "seed": int(seed),
        "pairing": pairing,
        "grid_res": grid_res,
    }
    if H is not None:
        cfg["H"] = H.describe()
    if extra:
        cfg.update(extra)
    return cfg


# -- rates --------------------------------------------------------------------


def gamma_rate(s):
    """``1 - 1/s`` for ``s in (1, 2]``, ``1/2`` for ``s > 2``."""
    s = float(s)
    if not s > 1:
        raise ValueError(f"the rate exponent needs s > 1, got {s}")
    return 1.0 - 1.0 / s if s <= 2 else 0.5


def alpha_bar(alphas):
    """Harmonic aggregate ``1 / sum_i (1 / alpha_i)``."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any(alphas <= 0):
        raise ValueError("smoothness indices must be positive")
    return float(1.0 / np.sum(1.0 / alphas))


def phi(n, s, abar, L=1.0):
    """Minimax rate ``L^(-g/(a+g)) n^(-g a/(a+g))`` with ``g = gamma_rate(s)``."""
    if abar <= 0 or L <= 0 or n < 1:
        raise ValueError("need abar > 0, L > 0 and n >= 1")
    g = gamma_rate(s)
    return L ** (-g / (abar + g)) * n ** (-g * abar / (abar + g))


def rate_exponent(s, abar):
    g = gamma_rate(s)
    return -g * abar / (abar + g)


def rate_grid(n, s, d=1, kappa1=1.0, kappa2=1.0, ratio=math.sqrt(2.0)):
    """Bandwidth grid prescribed for the rate study at sample size ``n``.

    ``h_min = kappa1 / n``; ``h_max = 1`` for ``s < 2`` and
    ``min(1, (kappa2 ln n)^(-s/(2d)))`` otherwise.
    """
    h_min = min(1.0, kappa1 / n)
    if s < 2:
        h_max = 1.0
    else:
        h_max = min(1.0, (kappa2 * math.log(n)) ** (-s / (2.0 * d)))
    h_max = max(h_max, h_min)
    return BandwidthGrid.geometric((h_min,) * d, (h_max,) * d, ratio)


def rate_study(density, K, n_list, reps, seed, s=2.0, q=1.0, kappa1=1.0, kappa2=1.0,
               ratio=math.sqrt(2.0), grid_res=4, method="auto", threads=1, pairing="consistent"):
    """Monte Carlo risk of the selected estimator across sample sizes."""
    n_list = [int(v) for v in n_list]
    if len(n_list) < 4:
        raise ValueError(f"need >= 4 sizes for a rate study, got {len(n_list)}")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    rows = []
    for n in n_list:
        H = rate_grid(n, s, density.d, kappa1, kappa2, ratio)
        row = mc_risk(density, K, n, reps, seed, "select", H=H, s=s, q=q, grid_res=grid_res,
                      method=method, threads=threads, pairing=pairing)
        row["H"] = H.describe()
        rows.append(row)
    slope = loglog_slope([(r["n"], r["risk"]) for r in rows])
    abar = density.effective_smoothness(K.order)
    summary = {
        "slope": slope,
        "alpha_eff": abar,
        "theory_slope": rate_exponent(s, abar) if s > 1 else None,
    }
    config = _config_echo("rate", density, K, s, q, n_list, reps, seed, None, pairing, grid_res,
                          {"kappa1": kappa1, "kappa2": kappa2, "ratio": ratio})
    return RiskReport("rate", config, rows, summary)


def grid_diagnostics(H):
    """``(A_H, B_H)`` of a bandwidth grid."""
    return H.a_h, H.b_h
