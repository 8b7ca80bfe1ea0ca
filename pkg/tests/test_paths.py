import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracbsde.errors import GridMismatchError, PreconditionError
from fracbsde.kernel import KernelMatrix, inner_product
from fracbsde.paths import (
    ItoFunction,
    Label,
    PathEnsemble,
    empirical_covariance,
    ito_residual,
    sample_fbm,
    wiener_integral,
)
from fracbsde.timegrid import TimeGrid


@pytest.fixture(scope="module")
def paths(kernel32):
    return sample_fbm(kernel32, 20000, 11)


def test_starts_at_zero_and_shape(paths):
    assert paths.label is Label.FBM
    assert paths.values.shape == (20000, 33)
    assert np.all(paths.values[:, 0] == 0.0)


def test_same_seed_bitwise(kernel32):
    a = sample_fbm(kernel32, 3000, 5)
    b = sample_fbm(kernel32, 3000, 5)
    assert np.array_equal(a.values, b.values)


def test_worker_count_invariance(kernel32):
    a = sample_fbm(kernel32, 5000, 9, workers=1)
    b = sample_fbm(kernel32, 5000, 9, workers=3)
    assert np.array_equal(a.values, b.values)


def test_prefix_stability(kernel32):
    # particle p's path does not depend on how many particles are drawn
    a = sample_fbm(kernel32, 100, 4)
    b = sample_fbm(kernel32, 2500, 4)
    assert np.array_equal(a.values, b.values[:100])


def test_terminal_variance(kernel32):
    p = sample_fbm(kernel32, 1000, 3)
    x = p.values[:, -1]
    se = np.sqrt((np.mean((x - x.mean()) ** 4) - x.var() ** 2) / x.size)
    assert abs(x.var(ddof=1) - 1.0) <= 5 * se


def test_covariance_entries(paths, kernel32):
    cov, se = empirical_covariance(paths)
    z = (cov[1:, 1:] - kernel32.covariance[1:, 1:]) / se[1:, 1:]
    assert np.max(np.abs(z)) <= 5


def test_marginal_normality(paths):
    x = paths.values[:, -1]
    x = (x - x.mean()) / x.std()
    n = x.size
    assert abs(np.mean(x**3)) <= 5 * np.sqrt(6 / n)
    assert abs(np.mean(x**4) - 3) <= 5 * np.sqrt(24 / n)


def test_wiener_integral_examples(paths, kernel32):
    assert np.all(wiener_integral(0.0, paths) == 0.0)
    assert np.allclose(wiener_integral(1.0, paths), paths.values[:, -1], atol=1e-12)
    I = wiener_integral(lambda t: t, paths)
    var = I.var(ddof=1)
    se = np.sqrt((np.mean((I - I.mean()) ** 4) - var**2) / I.size)
    # the left-point sum has variance f_l' W f_l; compare to that exact value
    fl = kernel32.grid.nodes[:-1]
    exact = fl @ kernel32.phi_weights @ fl
    assert abs(var - exact) <= 3 * se
    assert abs(exact - inner_product(lambda t: t, lambda t: t, 1.0, kernel32)) < 0.03


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_wiener_integral_linear(a, b):
    k = KernelMatrix(TimeGrid.uniform(1.0, 8), 0.7)
    p = sample_fbm(k, 50, 1)
    f = lambda t: np.sin(3 * t)
    g = lambda t: 1 + t**2
    lhs = wiener_integral(lambda t: a * f(t) + b * g(t), p)
    rhs = a * wiener_integral(f, p) + b * wiener_integral(g, p)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_wiener_integral_rejects_eta(kernel32):
    p = PathEnsemble(kernel32.grid, np.zeros((2, 33)), Label.ETA)
    with pytest.raises(PreconditionError):
        wiener_integral(1.0, p)


def _square():
    return ItoFunction(lambda t, x: x**2, lambda t, x: 0 * x, lambda t, x: 2 * x, lambda t, x: 2 + 0 * x)


def test_ito_linear_and_constant(paths, kernel32):
    lin = ItoFunction(lambda t, x: x, lambda t, x: 0 * x, lambda t, x: 1 + 0 * x, lambda t, x: 0 * x)
    assert np.max(np.abs(ito_residual(lin, 0.3, 1.0, paths, kernel32))) < 1e-12
    const = ItoFunction(lambda t, x: 5 + 0 * x, lambda t, x: 0 * x, lambda t, x: 0 * x, lambda t, x: 0 * x)
    assert np.all(ito_residual(const, 0.0, 1.0, paths, kernel32) == 0.0)


def test_ito_square_refinement():
    means = []
    for n in (32, 64, 128):
        k = KernelMatrix(TimeGrid.uniform(1.0, n), 0.75)
        r = ito_residual(_square(), 0.0, 1.0, sample_fbm(k, 4000, 8), k)
        means.append(np.mean(np.abs(r)))
    ratios = [a / b for a, b in zip(means, means[1:])]
    assert all(1.5 <= q <= 3.0 for q in ratios)


def test_ito_grid_mismatch(paths):
    other = KernelMatrix(TimeGrid.uniform(1.0, 16), 0.75)
    with pytest.raises(GridMismatchError):
        ito_residual(_square(), 0.0, 1.0, paths, other)


def test_to_rows(kernel32):
    p = sample_fbm(kernel32, 2, 1)
    rows = list(p.to_rows())
    assert len(rows) == 2 * 33
    assert rows[34][:2] == (1, 1)
