"""Exact fBm sampling, Wiener integrals and Ito-formula residuals."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FactorizationError, GridMismatchError, PreconditionError
from .kernel import KernelMatrix, cell_averages, norm_growth_nodes
from .timegrid import TimeGrid

# Particles are drawn in fixed blocks so results do not depend on the
# number of workers; each particle still owns its own counter stream.
_BLOCK = 2048


class Label(str, enum.Enum):
    FBM = "FBM"
    ETA = "ETA"
    STATE = "STATE"
    Y = "Y"
    Z = "Z"


@dataclass
class PathEnsemble:
    """N particles tabulated on every node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray
    label: Label
    seed: int | None = None
    drift: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.size:
            raise GridMismatchError(
                f"values must have shape (N, {self.grid.size}), got {self.values.shape}"
            )

    @property
    def particle_count(self) -> int:
        return self.values.shape[0]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def to_rows(self):
        """Rows (particle, node index, time, value) for CSV export."""
        t = self.grid.nodes
        for p in range(self.particle_count):
            for i in range(self.grid.size):
                yield p, i, t[i], self.values[p, i]


def particle_normals(seed: int, particle: int, size: int) -> np.ndarray:
    """Standard normals from the counter-based stream of one particle."""
    bits = np.random.Philox(key=int(seed) % 2**64, counter=[0, 0, 0, particle])
    return np.random.Generator(bits).standard_normal(size)


def _block_normals(seed: int, start: int, stop: int, size: int) -> np.ndarray:
    return np.stack([particle_normals(seed, p, size) for p in range(start, stop)])


def sample_fbm(kernel: KernelMatrix, N: int, seed: int, workers: int = 1) -> PathEnsemble:
    """N exact fBm paths on the kernel's grid via its Cholesky factor."""
    if N < 1:
        raise PreconditionError("N must be at least 1")
    L = kernel.chol
    if L is None or not np.all(np.isfinite(L)):
        raise FactorizationError("covariance factor unavailable")
    size = kernel.grid.size
    out = np.empty((N, size))
    blocks = [(a, min(a + _BLOCK, N)) for a in range(0, N, _BLOCK)]

    def fill(block):
        a, b = block
        z = _block_normals(seed, a, b, size - 1)
        out[a:b, 0] = 0.0
        out[a:b, 1:] = z @ L[1:, 1:].T

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    else:
        for block in blocks:
            fill(block)
    return PathEnsemble(kernel.grid, out, Label.FBM, seed=seed)


def _check_fbm(paths: PathEnsemble) -> None:
    if paths.label is not Label.FBM:
        raise PreconditionError("expected an FBM ensemble")


def _node_values(f, grid: TimeGrid) -> np.ndarray:
    t = grid.nodes
    if callable(f):
        return np.broadcast_to(np.asarray(f(t), dtype=float), t.shape).copy()
    if np.ndim(f) == 0:
        return np.full(t.shape, float(f))
    vals = np.asarray(f, dtype=float)
    if vals.shape[0] < t.shape[0]:
        raise GridMismatchError("tabulation does not match the grid")
    return vals[: t.shape[0]].copy()


def wiener_integral(f, paths: PathEnsemble, upto: int | None = None) -> np.ndarray:
    """Left-point sums of f(t_i)(B_{t_{i+1}} - B_{t_i}) up to node ``upto`` (default T)."""
    _check_fbm(paths)
    upto = paths.grid.n if upto is None else upto
    fv = _node_values(f, paths.grid)[:upto]
    return paths.increments()[:, :upto] @ fv


def wiener_integral_path(f, paths: PathEnsemble) -> np.ndarray:
    """Running Wiener integral at every node (N x nodes)."""
    _check_fbm(paths)
    fv = _node_values(f, paths.grid)[:-1]
    out = np.zeros_like(paths.values)
    np.cumsum(paths.increments() * fv, axis=1, out=out[:, 1:])
    return out


@dataclass
class ItoFunction:
    """F(t, x) with the partial derivatives the Ito formula needs."""

    F: Callable
    F_t: Callable
    F_x: Callable
    F_xx: Callable


def ito_residual(
    fn: ItoFunction,
    g,
    f,
    paths: PathEnsemble,
    kernel: KernelMatrix,
    x0: float = 0.0,
) -> np.ndarray:
    """F(T, X_T) minus the discretized right-hand side of the fractional Ito formula.

    X_t = x0 + int g ds + int f dB^H is built with left-point sums. The
    dB^H-integral of the random integrand F_x(s, X_s) f_s is a divergence
    integral, discretized as a Wick-Riemann sum: the left-point sum minus
    F_xx(t_i, X_i) f_i <D X_{t_i}, 1_[t_i, t_{i+1}]>, where the inner
    product uses the exact cell weights.
    """
    _check_fbm(paths)
    grid = paths.grid
    if not grid.same_as(kernel.grid):
        raise GridMismatchError("paths and kernel use different grids")
    n = grid.n
    h = grid.step
    t = grid.nodes[: n + 1]
    gv = _node_values(g, grid)[: n + 1]
    fv = _node_values(f, grid)[: n + 1]
    dB = paths.increments()[:, :n]
    X = np.empty((paths.particle_count, n + 1))
    X[:, 0] = x0
    np.cumsum(gv[:n] * h + fv[:n] * dB, axis=1, out=X[:, 1:])
    X[:, 1:] += x0

    W = kernel.phi_weights[:n, :n]
    # <f 1_[0,t_i], 1_cell_i> with f constant f_j on cell j (left values).
    malliavin = np.array([fv[:i] @ W[:i, i] for i in range(n)])
    growth = norm_growth_nodes(f, kernel)[:n]

    ti = t[:n][None, :]
    Xi = X[:, :n]
    fx = fn.F_x(ti, Xi)
    fxx = fn.F_xx(ti, Xi)
    rhs = fn.F(0.0, np.full(paths.particle_count, x0))
    rhs = rhs + (fn.F_t(ti, Xi) * h).sum(axis=1)
    rhs = rhs + (fx * gv[:n] * h).sum(axis=1)
    rhs = rhs + (fx * fv[:n] * dB - fxx * fv[:n] * malliavin).sum(axis=1)
    rhs = rhs + 0.5 * (fxx * growth * h).sum(axis=1)
    lhs = fn.F(t[n], X[:, n])
    return np.broadcast_to(lhs - rhs, (paths.particle_count,)).copy()


def empirical_covariance(paths: PathEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of the node values and its entrywise standard error."""
    x = paths.values
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (n - 1)
    sq = xc**2
    second = sq.T @ sq / n
    se = np.sqrt(np.maximum(second - cov**2, 0.0) / n)
    return cov, se


def cell_mid_values(f, grid: TimeGrid) -> np.ndarray:
    return cell_averages(_node_values(f, grid))
