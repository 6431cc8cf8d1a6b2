import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

import _oracles as orc
from kdeselect.estimators import (
    LatticeSummation,
    Sample,
    bias,
    convolve_grid_function,
    fit_aux,
    fit_kde,
    kde_values,
    smoothed_truth,
)
from kdeselect.experiments import get_density, replication_rng
from kdeselect.kernels import ProductKernel
from kdeselect.numerics import GridFunction, grid_with_spacing, make_grid

TRI = ProductKernel.from_name("triangular", 1, 1)


def test_single_observation():
    grid = make_grid([[-0.625, 0.625]], [5])
    est = fit_kde([[0.0]], TRI, 1.0, grid)
    vals = dict(zip(np.round(grid.axes[0], 12), est.values))
    assert vals[0.0] == pytest.approx(2.0, abs=1e-15)
    assert vals[0.25] == pytest.approx(1.0, abs=1e-15)


def test_matches_naive_double_loop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=40)
    grid = make_grid([[-3, 3]], [97])
    K2 = ProductKernel.from_name("triangular", 2, 1)
    est = fit_kde(x, K2, 0.4, grid)
    ref = orc.kde_at(grid.axes[0], x, lambda y: orc.k_h(y, 0.4, 2))
    np.testing.assert_allclose(est.values, ref, atol=1e-13)
    aux = fit_aux(x, K2, 0.4, 0.15, grid)
    ref = orc.kde_at(grid.axes[0], x, lambda y: orc.conv(y, 0.4, 0.15, 2))
    np.testing.assert_allclose(aux.values, ref, atol=1e-11)


@pytest.mark.parametrize("l", [1, 2, 3])
@pytest.mark.parametrize("d", [1, 2])
def test_unit_mass_on_default_grid(l, d):
    rng = np.random.default_rng(l * 10 + d)
    K = ProductKernel.from_name("biweight", l, d)
    h = (0.3, 0.2)[:d]
    est = fit_kde(rng.normal(size=(300, d)), K, h)
    assert est.leakage <= 1e-3
    aux = fit_aux(rng.normal(size=(300, d)), K, h, (0.25,) * d)
    assert aux.leakage <= 1e-3


def test_shift_equivariance():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(200, 2))
    K = ProductKernel.from_name("triangular", 2, 2)
    grid = grid_with_spacing([-4, -4], [4, 4], 0.05)
    c = np.array([0.75, -2.5])
    a = fit_kde(x, K, (0.3, 0.5), grid).values
    b = fit_kde(x + c, K, (0.3, 0.5), grid.shifted(c)).values
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_aux_symmetry():
    rng = np.random.default_rng(5)
    x = rng.normal(size=500)
    K = ProductKernel.from_name("biweight", 2, 1)
    grid = grid_with_spacing([-5], [5], 0.01)
    a = fit_aux(x, K, 0.3, 0.07, grid).values
    b = fit_aux(x, K, 0.07, 0.3, grid).values
    assert np.max(np.abs(a - b)) <= 1e-9


def test_aux_equals_grid_convolution_of_plain_estimate():
    rng = np.random.default_rng(6)
    x = rng.normal(size=300)
    grid = grid_with_spacing([-5], [5], 0.002)
    f_eta = fit_kde(x, TRI, 0.2, grid).function
    aux = fit_aux(x, TRI, 0.3, 0.2, grid).values
    conv = convolve_grid_function(f_eta, TRI.scaled(0.3)).values
    assert np.max(np.abs(aux - conv)) <= 1e-4 * np.max(np.abs(aux))


def test_nonnegative_for_order_one():
    rng = np.random.default_rng(8)
    for name in ("triangular", "biweight"):
        K = ProductKernel.from_name(name, 1, 2)
        est = fit_kde(rng.normal(size=(100, 2)), K, (0.2, 0.4))
        assert np.all(est.values >= 0)


def test_linearity_in_the_sample():
    rng = np.random.default_rng(9)
    x1, x2 = rng.normal(size=70), rng.normal(size=130)
    grid = grid_with_spacing([-5], [5], 0.01)
    K = ProductKernel.from_name("triangular", 3, 1)
    f1 = fit_kde(x1, K, 0.25, grid).values
    f2 = fit_kde(x2, K, 0.25, grid).values
    f12 = fit_kde(np.concatenate([x1, x2]), K, 0.25, grid).values
    np.testing.assert_allclose(f12, (70 * f1 + 130 * f2) / 200, atol=1e-13)


@pytest.mark.parametrize("l", [1, 2])
@pytest.mark.parametrize("name", ["triangular", "biweight"])
def test_binned_close_to_direct(name, l):
    mix = get_density("mixture")
    K = ProductKernel.from_name(name, l, 1)
    for rep, h in enumerate((0.05, 0.3)):
        x = mix.sample(replication_rng(11, rep), 1000)
        direct = fit_kde(x, K, h)
        binned = fit_kde(x, K, h, grid=direct.grid, method="binned")
        dev = np.max(np.abs(binned.values - direct.values))
        assert dev <= 1e-3 * np.max(np.abs(direct.values))


def test_binned_two_dimensional():
    rng = np.random.default_rng(12)
    K = ProductKernel.from_name("triangular", 1, 2)
    x = rng.normal(size=(400, 2))
    direct = fit_kde(x, K, (0.4, 0.3))
    binned = fit_kde(x, K, (0.4, 0.3), grid=direct.grid, method="binned")
    assert np.max(np.abs(binned.values - direct.values)) <= 1e-3 * direct.values.max()


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=40),
    st.floats(0.01, 0.8),
    st.floats(0.01, 0.8),
    st.integers(1, 3),
    st.sampled_from(["triangular", "biweight"]),
)
# a knot of K_h * K_eta on a lattice node
@example([0.0], 0.5, 0.02, 3, "triangular")
# h - eta and eta nearly coincide, leaving a piece of width ~3e-6
@example([1.0], 1.0 / 3.0, 0.1666639039826614, 1, "biweight")
def test_lattice_equals_direct(xs, h, eta, l, name):
    K = ProductKernel.from_name(name, l, 1)
    grid = grid_with_spacing([-4], [4], min(h, eta) / 4)
    U = K.convolved(h, eta)
    eng = LatticeSummation(np.array(xs), grid, U.radii[0])
    for fn in (U, K.scaled(h), U.squared()):
        a = kde_values(xs, fn, grid, "direct")
        b = kde_values(xs, fn, grid, "lattice", engine=eng)
        assert np.max(np.abs(a - b)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


def test_lattice_spectra_cache_is_reused():
    rng = np.random.default_rng(13)
    grid = grid_with_spacing([-4], [4], 0.005)
    cache = {}
    outs = []
    for _ in range(2):
        eng = LatticeSummation(rng.normal(size=100), grid, 1.0, cache)
        outs.append(eng.evaluate(TRI.scaled(0.2).factors[0], key=("K", 0.2)))
    assert len(cache) == 1


def test_lattice_rejects_wide_kernel():
    grid = grid_with_spacing([-4], [4], 0.01)
    eng = LatticeSummation(np.zeros(3), grid, 0.1)
    with pytest.raises(ValueError):
        eng.evaluate(TRI.scaled(1.0).factors[0])


def test_constant_density_has_no_interior_bias():
    grid = grid_with_spacing([-3], [3], 0.001)
    f = GridFunction(grid, np.ones(grid.shape))
    K = ProductKernel.from_name("biweight", 2, 1)
    b = bias(f, K, 0.4).values
    interior = np.abs(grid.axes[0]) < 3 - 0.4 * K.radius - 0.01
    assert np.max(np.abs(b[interior])) <= 1e-9


def test_bias_vanishes_on_low_degree_polynomials():
    grid = grid_with_spacing([-3], [3], 0.0005)
    t = grid.axes[0]
    f = GridFunction(grid, 0.1 + 0.02 * t - 0.01 * t**2)
    K3 = ProductKernel.from_name("triangular", 3, 1)
    b = bias(f, K3, 0.5).values
    interior = np.abs(t) < 3 - 0.5 * K3.radius - 0.01
    assert np.max(np.abs(b[interior])) <= 1e-7
    K2 = ProductKernel.from_name("triangular", 2, 1)
    b2 = bias(f, K2, 0.5).values
    assert np.max(np.abs(b2[interior])) > 1e-4


def test_fubini_bias_identity():
    dens = get_density("gaussian")
    grid = grid_with_spacing([-7], [7], 0.002)
    f = dens.on_grid(grid)
    K = ProductKernel.from_name("triangular", 2, 1)
    h, eta = 0.4, 0.25
    lhs = convolve_grid_function(f, K.convolved(h, eta)) - f
    rhs = bias(f, K, eta) + convolve_grid_function(bias(f, K, h), K.scaled(eta))
    assert np.max(np.abs(lhs.values - rhs.values)) <= 1e-4


def test_smoothed_truth_rejects_small_box():
    grid = grid_with_spacing([-0.2], [0.2], 0.01)
    f = GridFunction(grid, np.ones(grid.shape))
    with pytest.raises(ValueError, match="grid too small"):
        smoothed_truth(f, TRI, 0.5)


def test_errors():
    K2 = ProductKernel.from_name("triangular", 1, 2)
    grid1 = grid_with_spacing([-1], [1], 0.1)
    with pytest.raises(ValueError):
        fit_kde(np.zeros((5, 1)), K2, 0.3)
    with pytest.raises(ValueError):
        fit_kde(np.zeros((5, 2)), K2, 0.3, grid1)
    with pytest.raises(ValueError):
        Sample(np.empty((0, 1)))
    with pytest.raises(ValueError):
        Sample([[np.inf]])
    with pytest.raises(ValueError):
        kde_values(np.zeros(3), TRI.scaled(0.2), grid1, method="bogus")
    grid2 = grid_with_spacing([-1, -1], [1, 1], 0.1)
    with pytest.raises(ValueError):
        kde_values(np.zeros((3, 2)), K2.scaled(0.2), grid2, method="lattice")

