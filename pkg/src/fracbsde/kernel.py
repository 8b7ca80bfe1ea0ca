"""Fractional kernel phi(x) = H(2H - 1)|x|^(2H - 2) and its quadratures.

All double integrals against phi use cell-averaged integrands and the
closed-form cell weights

    W[i, j] = int_{cell i} int_{cell j} phi(u - v) du dv
            = h^(2H)/2 * (|k+1|^(2H) - 2|k|^(2H) + |k-1|^(2H)),  k = i - j,

so phi is never evaluated at zero and <1, 1>_T = T^(2H) holds to rounding.
The same matrix is the covariance of the fBm increments on the grid.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import DomainError, FactorizationError, PreconditionError, SingularityError
from .timegrid import TimeGrid

PSD_PIVOT_TOL = 1e-10
M_FLOOR = 2.0 + 1e-6


def validate_hurst(H: float) -> float:
    """Return ``H`` as a float if 1/2 < H < 1, else raise."""
    H = float(H)
    if not (0.5 < H < 1.0):
        raise PreconditionError("H must lie in (1/2, 1)")
    return H


def phi(x, H: float):
    """Kernel H(2H - 1)|x|^(2H - 2); singular at x = 0."""
    H = validate_hurst(H)
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise SingularityError("phi is singular at 0; use cell-integrated weights")
    out = H * (2 * H - 1) * np.abs(x) ** (2 * H - 2)
    return float(out) if out.ndim == 0 else out


def fbm_covariance(t, s, H: float):
    """Cov(B_t, B_s) = (t^2H + s^2H - |t - s|^2H) / 2."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))


def cell_weights(n_cells: int, step: float, H: float) -> np.ndarray:
    """Exact phi-integrals over pairs of grid cells (symmetric Toeplitz)."""
    k = np.arange(n_cells, dtype=float)
    p = 2 * H
    w = 0.5 * step**p * ((k + 1) ** p - 2 * k**p + np.abs(k - 1) ** p)
    idx = np.abs(np.subtract.outer(np.arange(n_cells), np.arange(n_cells)))
    return w[idx]


def _pivot_tolerant_cholesky(a: np.ndarray, tol: float = PSD_PIVOT_TOL) -> np.ndarray:
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d < -tol:
            raise FactorizationError(f"negative pivot {d:.3e} at row {j}")
        if d <= 0:
            continue
        L[j, j] = np.sqrt(d)
        L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def _sigma_hat_matrix(grid: TimeGrid, H: float) -> np.ndarray:
    # Row k integrates phi(t_k - v) against the piecewise-linear interpolant
    # of sigma on [0, t_k]; exact for sigma linear on each cell.
    size = grid.size
    h = grid.step
    t = grid.nodes
    S = np.zeros((size, size))
    p = 2 * H
    for k in range(1, size):
        j = np.arange(k)
        a = t[k] - t[j + 1]
        b = t[k] - t[j]
        i0 = H * (b ** (p - 1) - a ** (p - 1))
        i1 = 0.5 * (p - 1) * (b**p - a**p)
        lin = (i1 - a * i0) / h
        np.add.at(S[k], j + 1, i0 - lin)
        np.add.at(S[k], j, lin)
    return S


class KernelMatrix:
    """Quadrature tableau, fBm covariance and its factor for one grid.

    Attributes
    ----------
    grid : TimeGrid
    H : float
    phi_weights : ndarray, shape (cells, cells)
        Cell-pair integrals of phi; also the increment covariance.
    covariance : ndarray, shape (nodes, nodes)
        Cov(B_{t_i}, B_{t_j}), including the zero row of t_0 = 0.
    chol : ndarray, shape (nodes, nodes)
        Lower-triangular factor with chol @ chol.T == covariance.
    """

    def __init__(self, grid: TimeGrid, H: float):
        self.grid = grid
        self.H = validate_hurst(H)
        self.phi_weights = cell_weights(grid.size - 1, grid.step, self.H)
        t = grid.nodes
        self.covariance = fbm_covariance(t[:, None], t[None, :], self.H)
        self.chol = self._factor()
        for arr in (self.phi_weights, self.covariance, self.chol):
            arr.setflags(write=False)

    def _factor(self) -> np.ndarray:
        inner = self.covariance[1:, 1:]
        try:
            L_inner = np.linalg.cholesky(inner)
        except np.linalg.LinAlgError:
            L_inner = _pivot_tolerant_cholesky(inner)
        L = np.zeros_like(self.covariance)
        L[1:, 1:] = L_inner
        return L

    @cached_property
    def sigma_hat_matrix(self) -> np.ndarray:
        S = _sigma_hat_matrix(self.grid, self.H)
        S.setflags(write=False)
        return S

    def tabulate(self, f) -> np.ndarray:
        """Node values of ``f`` (callable, scalar or array) on this grid."""
        t = self.grid.nodes
        if callable(f):
            vals = np.broadcast_to(np.asarray(f(t), dtype=float), t.shape)
        elif np.ndim(f) == 0:
            vals = np.full(t.shape, float(f))
        else:
            vals = np.asarray(f, dtype=float)
            if vals.shape[0] < t.shape[0]:
                raise DomainError("tabulated function does not cover the grid")
            vals = vals[: t.shape[0]]
        return np.array(vals, dtype=float)

    def cells_until(self, T: float) -> int:
        if T > self.grid.horizon + 1e-12 or T < 0:
            raise DomainError(f"grid [0, {self.grid.horizon}] does not cover [0, {T}]")
        try:
            return self.grid.index_of(T)
        except PreconditionError as exc:
            raise DomainError(f"T={T} is not a grid node") from exc


def cell_averages(values: np.ndarray) -> np.ndarray:
    """Cell means of a piecewise-linear node tabulation."""
    v = np.asarray(values, dtype=float)
    return 0.5 * (v[..., 1:] + v[..., :-1])


def inner_product(xi, psi, T: float, kernel: KernelMatrix) -> float:
    """Quadrature of the double integral of phi(u - v) xi_u psi_v over [0, T]^2."""
    k = kernel.cells_until(T)
    a = cell_averages(kernel.tabulate(xi))[:k]
    b = cell_averages(kernel.tabulate(psi))[:k]
    return float(a @ kernel.phi_weights[:k, :k] @ b)


def norm_squared(xi, T: float, kernel: KernelMatrix) -> float:
    return inner_product(xi, xi, T, kernel)


def _check_single_signed(sig: np.ndarray, upto: int) -> None:
    # sigma_0 may vanish; sigma must keep one strict sign on (0, t_upto].
    s = sig[1 : upto + 1]
    if not (np.all(s > 0) and sig[0] >= 0 or np.all(s < 0) and sig[0] <= 0):
        raise PreconditionError("sigma must be nonvanishing and single-signed")


def sigma_hat_nodes(sigma, kernel: KernelMatrix) -> np.ndarray:
    """sigma_hat at every grid node (0 at t = 0)."""
    sig = kernel.tabulate(sigma)
    _check_single_signed(sig, kernel.grid.size - 1)
    return kernel.sigma_hat_matrix @ sig


def sigma_hat(sigma, t: float, kernel: KernelMatrix) -> float:
    """Integral of phi(t - v) sigma_v over [0, t]; linear between nodes."""
    if t == 0:
        return 0.0
    if t < 0 or t > kernel.grid.horizon + 1e-12:
        raise DomainError(f"t={t} outside the grid")
    vals = sigma_hat_nodes(sigma, kernel)
    return float(np.interp(t, kernel.grid.nodes, vals))


def norm_growth(sigma, t: float, kernel: KernelMatrix) -> float:
    """d/dt ||sigma||_t^2 = 2 sigma_hat_t sigma_t."""
    sig = kernel.tabulate(sigma)
    s_t = float(np.interp(t, kernel.grid.nodes, sig))
    return 2.0 * sigma_hat(sigma, t, kernel) * s_t


def norm_growth_nodes(sigma, kernel: KernelMatrix) -> np.ndarray:
    sig = kernel.tabulate(sigma)
    return 2.0 * sigma_hat_nodes(sig, kernel) * sig


def sigma_ratio_profile(sigma, kernel: KernelMatrix, upto: int | None = None) -> np.ndarray:
    """sigma_hat_t / (sigma_t t^(2H-1)) at nodes 1..upto (default: the node at T)."""
    upto = kernel.grid.n if upto is None else upto
    sig = kernel.tabulate(sigma)
    hat = sigma_hat_nodes(sig, kernel)
    t = kernel.grid.nodes[1 : upto + 1]
    ratio = hat[1 : upto + 1] / (sig[1 : upto + 1] * t ** (2 * kernel.H - 1))
    if np.any(ratio <= 0):
        raise PreconditionError("sigma_hat / sigma is nonpositive at some node")
    return ratio


def m_bound_raw(sigma, kernel: KernelMatrix) -> tuple[float, int]:
    """Smallest M with t^(2H-1)/M <= sigma_hat/sigma <= M t^(2H-1), and its node."""
    r = sigma_ratio_profile(sigma, kernel)
    both = np.maximum(r, 1.0 / r)
    k = int(np.argmax(both))
    return float(both[k]), k + 1


def m_bound(sigma, kernel: KernelMatrix) -> float:
    """The M-bound inflated to exceed 2, as the contraction argument requires."""
    raw, _ = m_bound_raw(sigma, kernel)
    return max(raw, M_FLOOR)
