"""Forward Euler simulation of the Gaussian driver and of the mean-field delayed state."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GridMismatchError, PreconditionError
from .paths import Label, PathEnsemble
from .timegrid import TimeGrid


def _tab(f, grid: TimeGrid) -> np.ndarray:
    t = grid.nodes
    if callable(f):
        return np.broadcast_to(np.asarray(f(t), dtype=float), t.shape).copy()
    if np.ndim(f) == 0:
        return np.full(t.shape, float(f))
    v = np.asarray(f, dtype=float)
    if v.shape[0] < t.shape[0]:
        raise GridMismatchError("tabulation does not cover the grid")
    return v[: t.shape[0]].copy()


class EmpiricalLaw:
    """Law of a random variable represented by its particle sample."""

    def __init__(self, samples):
        self.samples = np.asarray(samples, dtype=float)

    def mean(self) -> float:
        return float(self.samples.mean())

    def moment(self, psi: Callable) -> float:
        """The scalar moment (psi, m) = E[psi(xi)]."""
        return float(np.mean(psi(self.samples)))


@dataclass
class EtaSpec:
    """eta_t = eta0 + int_0^t b ds + int_0^t sigma dB^H with deterministic b, sigma."""

    eta0: float
    b: object = 0.0
    sigma: object = 1.0

    def tabulate(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        b = _tab(self.b, grid)
        s = _tab(self.sigma, grid)
        if np.any(s[1:] == 0) or (np.any(s[1:] > 0) and np.any(s[1:] < 0)):
            raise PreconditionError("sigma must be nonvanishing and single-signed on (0, T]")
        return b, s


def _euler(start: np.ndarray, drift_at: Callable[[int, np.ndarray], float], sigma: np.ndarray,
           fbm: PathEnsemble) -> tuple[np.ndarray, np.ndarray]:
    grid = fbm.grid
    h = grid.step
    dB = fbm.increments()
    X = np.empty_like(fbm.values)
    X[:, 0] = start
    drift = np.empty(grid.size - 1)
    for i in range(grid.size - 1):
        d = drift_at(i, X)
        if np.ndim(d) != 0:
            raise PreconditionError("drift must be deterministic (one value per time)")
        drift[i] = d
        X[:, i + 1] = X[:, i] + d * h + sigma[i] * dB[:, i]
    return X, drift


def simulate_eta(spec: EtaSpec, fbm: PathEnsemble) -> PathEnsemble:
    """Euler/Wiener sums for eta on every node of the fBm grid."""
    if fbm.label is not Label.FBM:
        raise PreconditionError("simulate_eta expects an FBM ensemble")
    b, s = spec.tabulate(fbm.grid)
    X, drift = _euler(np.full(fbm.particle_count, float(spec.eta0)), lambda i, _: b[i], s, fbm)
    return PathEnsemble(fbm.grid, X, Label.ETA, seed=fbm.seed, drift=drift)


@dataclass
class StateSpec:
    """Controlled mean-field delayed state dX = drift(t, laws) dt + vol(t) dB^H.

    ``drift(t, law_x, law_x_delayed, law_u)`` receives :class:`EmpiricalLaw`
    objects and must return one real number (the drift is deterministic).
    ``x0`` is the initial path on [-delay, 0], a constant or a callable.
    The drift is assumed Lipschitz in the scalar moments it reads.
    """

    drift: Callable
    vol: object
    x0: object
    delay: float


def _control_matrix(control, N: int, grid: TimeGrid) -> np.ndarray:
    if callable(control):
        control = _tab(control, grid)
    u = np.asarray(control, dtype=float)
    if u.ndim == 0:
        return np.full((N, grid.size), float(u))
    if u.ndim == 1:
        return np.broadcast_to(_tab(u, grid), (N, grid.size))
    if u.shape[0] != N or u.shape[1] < grid.size:
        raise GridMismatchError("control must be tabulated per particle on the grid")
    return u[:, : grid.size]


def simulate_state(spec: StateSpec, control, fbm: PathEnsemble) -> PathEnsemble:
    """Euler scheme with laws replaced by ensemble moments.

    Delayed values come from ``x0`` while t_i - delay < 0. The per-step
    drift actually used is kept on the returned ensemble's ``drift``.
    """
    if fbm.label is not Label.FBM:
        raise PreconditionError("simulate_state expects an FBM ensemble")
    grid = fbm.grid
    if spec.delay < 0:
        raise PreconditionError("delay must be nonnegative")
    lag = spec.delay / grid.step
    if abs(lag - round(lag)) > 1e-9:
        raise PreconditionError("delay must be a multiple of the grid step")
    lag = int(round(lag))
    N = fbm.particle_count
    u = _control_matrix(control, N, grid)
    vol = _tab(spec.vol, grid)
    t = grid.nodes

    def initial(s: float) -> float:
        if s < -spec.delay - 1e-12:
            raise PreconditionError(f"delayed time {s} precedes the initial segment")
        return float(spec.x0(s)) if callable(spec.x0) else float(spec.x0)

    def drift_at(i: int, X: np.ndarray) -> float:
        law_x = EmpiricalLaw(X[:, i])
        if i >= lag:
            law_d = EmpiricalLaw(X[:, i - lag])
        else:
            law_d = EmpiricalLaw(np.full(1, initial(t[i] - spec.delay)))
        return spec.drift(t[i], law_x, law_d, EmpiricalLaw(u[:, i]))

    X, drift = _euler(np.full(N, initial(0.0)), drift_at, vol, fbm)
    return PathEnsemble(grid, X, Label.STATE, seed=fbm.seed, drift=drift)


def mean_delay_ode(beta1, extra_drift, x0, grid: TimeGrid, delay: float) -> np.ndarray:
    """Euler method of steps for m'(t) = -beta1(t) m(t - delay) + extra(t), m = x0 on [-delay, 0]."""
    lag = delay / grid.step
    if abs(lag - round(lag)) > 1e-9:
        raise PreconditionError("delay must be a multiple of the grid step")
    lag = int(round(lag))
    b1 = _tab(beta1, grid)
    ex = _tab(extra_drift, grid)
    t = grid.nodes
    x0f = x0 if callable(x0) else (lambda s, c=float(x0): c)
    m = np.empty(grid.size)
    m[0] = x0f(0.0)
    h = grid.step
    for i in range(grid.size - 1):
        md = m[i - lag] if i >= lag else x0f(t[i] - delay)
        m[i + 1] = m[i] + h * (-b1[i] * md + ex[i])
    return m
