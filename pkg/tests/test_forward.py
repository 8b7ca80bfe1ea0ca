import numpy as np
import pytest

from fracbsde.errors import PreconditionError
from fracbsde.forward import EtaSpec, StateSpec, mean_delay_ode, simulate_eta, simulate_state
from fracbsde.kernel import KernelMatrix, norm_squared
from fracbsde.paths import Label, sample_fbm
from fracbsde.timegrid import TimeGrid


@pytest.fixture(scope="module")
def fbm(kernel32):
    return sample_fbm(kernel32, 20000, 17)


def test_eta_driftless_is_fbm(fbm):
    eta = simulate_eta(EtaSpec(0.7, 0.0, 1.0), fbm)
    assert eta.label is Label.ETA
    assert np.allclose(eta.values, 0.7 + fbm.values, atol=1e-13)


def test_eta_mean_with_drift(fbm):
    x = simulate_eta(EtaSpec(0.5, 1.0, 1.0), fbm).values[:, -1]
    assert abs(x.mean() - 1.5) <= 4 * x.std() / np.sqrt(x.size)


def test_eta_variance_time_volatility():
    k = KernelMatrix(TimeGrid.uniform(1.0, 256), 0.75)
    x = simulate_eta(EtaSpec(0.0, 0.0, lambda t: t), sample_fbm(k, 20000, 2)).values[:, -1]
    var = x.var(ddof=1)
    se = np.sqrt((np.mean((x - x.mean()) ** 4) - var**2) / x.size)
    assert abs(var - norm_squared(lambda t: t, 1.0, k)) <= 3 * se


def test_eta_variance_nondecreasing(fbm):
    v = simulate_eta(EtaSpec(0.0, 0.0, 2.0), fbm).values.var(axis=0)
    assert np.all(np.diff(v) > -0.02 * v[1:])


def test_eta_rejects_sign_change(fbm):
    with pytest.raises(PreconditionError):
        simulate_eta(EtaSpec(0.0, 0.0, lambda t: t - 0.5), fbm)


def test_state_without_law_dependence_matches_eta(fbm):
    spec = StateSpec(lambda t, lx, ld, lu: 0.3, 1.5, 0.2, 0.25)
    x = simulate_state(spec, 0.0, fbm)
    eta = simulate_eta(EtaSpec(0.2, 0.3, 1.5), fbm)
    assert np.array_equal(x.values, eta.values)


def test_state_second_moment(fbm, kernel32):
    spec = StateSpec(lambda t, lx, ld, lu: -0.0 * ld.mean(), 1.0, 0.5, 0.25)
    x = simulate_state(spec, 0.0, fbm).values[:, -1]
    m2 = np.mean(x**2)
    se = np.std(x**2, ddof=1) / np.sqrt(x.size)
    assert abs(m2 - (0.25 + norm_squared(1.0, 1.0, kernel32))) <= 3 * se


def test_state_mean_matches_delay_ode(fbm, kernel32):
    c = 0.8
    spec = StateSpec(lambda t, lx, ld, lu: -0.5 * ld.mean() - lu.mean() ** 2, 1.0, 1.0, 0.25)
    x = simulate_state(spec, c, fbm).values
    m = mean_delay_ode(0.5, -c * c, 1.0, kernel32.grid, 0.25)
    se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - m) <= 4 * se + 1e-12)


def test_state_mean_field_consistency(kernel32):
    spec = StateSpec(lambda t, lx, ld, lu: -0.5 * ld.mean() + 0.2 * lx.mean(), 1.0, 1.0, 0.25)
    a = simulate_state(spec, 0.0, sample_fbm(kernel32, 5000, 1)).values
    b = simulate_state(spec, 0.0, sample_fbm(kernel32, 10000, 2)).values
    se = np.sqrt(a.var(axis=0) / 5000 + b.var(axis=0) / 10000)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 5 * se + 1e-12)


def test_state_rejects_random_drift(fbm):
    spec = StateSpec(lambda t, lx, ld, lu: lx.samples, 1.0, 0.0, 0.25)
    with pytest.raises(PreconditionError):
        simulate_state(spec, 0.0, fbm)


def test_state_rejects_misaligned_delay(fbm):
    with pytest.raises(PreconditionError):
        simulate_state(StateSpec(lambda *a: 0.0, 1.0, 0.0, 0.3), 0.0, fbm)


def test_mean_delay_ode_examples():
    g = TimeGrid.uniform(1.0, 100)
    assert np.allclose(mean_delay_ode(0.0, 0.0, 2.5, g, 0.5), 2.5)
    assert mean_delay_ode(0.0, -1.0, 0.0, g, 0.5)[-1] == pytest.approx(-1.0, abs=1e-12)


def test_mean_delay_ode_refinement():
    # closed form: m = 1 - t on [0, 0.5]; m = 1 - t + (t - 0.5)^2 / 2 on [0.5, 1]
    exact = 1 - 1.0 + 0.125
    errs = []
    for n in (20, 200):
        errs.append(abs(mean_delay_ode(1.0, 0.0, 1.0, TimeGrid.uniform(1.0, n), 0.5)[-1] - exact))
    assert errs[1] < errs[0] / 5
    assert errs[1] < 5e-3
