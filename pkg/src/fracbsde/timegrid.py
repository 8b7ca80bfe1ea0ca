"""Uniform time grids on [0, T + K] and the delay maps of anticipated equations."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import HorizonError, PreconditionError, UnverifiableDelayError

_NODE_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = T < ... < t_{n+m} = T + K.

    Both ``T`` and ``T + K`` must be integer multiples of ``step``.
    """

    T: float
    K: float
    step: float
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.T > 0 and self.step > 0):
            raise PreconditionError("T and step must be positive")
        if self.K < 0:
            raise PreconditionError("K must be nonnegative")
        n = self.T / self.step
        m = self.K / self.step
        if abs(n - round(n)) > _NODE_TOL * max(1.0, n) or abs(m - round(m)) > _NODE_TOL * max(1.0, m):
            raise PreconditionError("T and K must be integer multiples of step")
        nodes = np.arange(round(n) + round(m) + 1) * self.step
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, T: float, n_steps: int, K: float = 0.0) -> "TimeGrid":
        """Grid with ``n_steps`` cells on [0, T] and the same step on [T, T + K]."""
        return cls(T=T, K=K, step=T / n_steps)

    @property
    def n(self) -> int:
        """Index of the node at T."""
        return int(round(self.T / self.step))

    @property
    def m(self) -> int:
        """Number of cells in the extension [T, T + K]."""
        return int(round(self.K / self.step))

    @property
    def size(self) -> int:
        return self.n + self.m + 1

    @property
    def horizon(self) -> float:
        return self.T + self.K

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is off-grid."""
        x = t / self.step
        i = int(round(x))
        if abs(x - i) > 1e-7 or i < 0 or i >= self.size:
            raise PreconditionError(f"t={t} is not a node of the grid")
        return i

    def restricted(self, K: float = 0.0) -> "TimeGrid":
        """Same step and horizon T with a different extension."""
        return TimeGrid(T=self.T, K=K, step=self.step)

    def same_as(self, other: "TimeGrid") -> bool:
        return (
            math.isclose(self.T, other.T)
            and math.isclose(self.K, other.K, abs_tol=1e-12)
            and math.isclose(self.step, other.step)
        )


def _as_delay(d) -> Callable[[np.ndarray], np.ndarray]:
    if d is None:
        d = 0.0
    if callable(d):
        return lambda t: np.broadcast_to(np.asarray(d(t), dtype=float), np.shape(t))
    c = float(d)
    return lambda t: np.full(np.shape(t), c)


@dataclass
class DelaySpec:
    """Anticipation maps delta(t), zeta(t) >= 0 and an optional user bound L.

    ``delta`` and ``zeta`` accept a constant, a vectorized callable, or None
    when the corresponding argument is not anticipated (read as 0 but left
    out of the L certificate).
    """

    delta: object = None
    zeta: object = None
    L: float | None = None

    def delta_at(self, t) -> np.ndarray:
        return _as_delay(self.delta)(np.asarray(t, dtype=float))

    def zeta_at(self, t) -> np.ndarray:
        return _as_delay(self.zeta)(np.asarray(t, dtype=float))

    @property
    def is_constant(self) -> bool:
        return not callable(self.delta) and not callable(self.zeta)


def _slope_bound(shifted: np.ndarray, step: float) -> float | None:
    diffs = np.diff(shifted)
    if np.any(diffs <= 0):
        return None
    return float(np.max(step / diffs))


def validate_delays(spec: DelaySpec, grid: TimeGrid) -> float:
    """Check t + delta(t) <= T + K on the grid and return a constant L.

    For strictly increasing shift maps t -> t + delta(t) the change of
    variables gives L = max(step / increment of the shifted node); the
    bound for ``zeta`` is computed the same way and the larger one wins.
    Otherwise the user-supplied ``spec.L`` is returned.
    """
    t = grid.nodes[: grid.n + 1]
    horizon = grid.horizon + _NODE_TOL * grid.step
    bounds = []
    for name, raw in (("delta", spec.delta), ("zeta", spec.zeta)):
        if raw is None:
            continue
        values = _as_delay(raw)(t)
        if np.any(values < 0):
            raise PreconditionError(f"{name} must be nonnegative")
        shifted = t + values
        if np.any(shifted > horizon):
            bad = float(t[np.argmax(shifted > horizon)])
            raise HorizonError(f"t + {name}(t) exceeds T + K at t={bad}")
        bounds.append(_slope_bound(shifted, grid.step))
    if not bounds:
        return 1.0
    if all(b is not None for b in bounds):
        return max(bounds)
    if spec.L is None:
        raise UnverifiableDelayError(
            "shift map is not strictly increasing; supply L explicitly"
        )
    return float(spec.L)


def shift_index(i: int, shift, grid: TimeGrid) -> int:
    """Index of the node nearest to t_i + shift(t_i).

    ``shift`` is a constant or a callable. Off-grid targets are rounded and
    a ``UserWarning`` records the rounding.
    """
    if i < 0 or i > grid.n:
        raise PreconditionError("shift_index is defined for nodes t_i <= T")
    t_i = grid.nodes[i]
    s = float(shift(t_i)) if callable(shift) else float(shift)
    x = (t_i + s) / grid.step
    j = int(round(x))
    if j > grid.n + grid.m:
        raise HorizonError(f"t_{i} + shift = {t_i + s} is beyond T + K = {grid.horizon}")
    if abs(x - j) > 1e-7:
        warnings.warn(
            f"shift {s} at t={t_i} is not a multiple of the step; rounded to node {j}",
            stacklevel=2,
        )
    return j


def shift_indices(shift, grid: TimeGrid) -> np.ndarray:
    """Vector of ``shift_index`` over all nodes t_i <= T (one warning at most)."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = np.array([shift_index(i, shift, grid) for i in range(grid.n + 1)], dtype=int)
    if caught:
        warnings.warn(
            f"{len(caught)} shifted nodes were rounded to the grid", stacklevel=2
        )
    return out
