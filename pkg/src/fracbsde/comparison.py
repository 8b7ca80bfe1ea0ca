"""Ordered solutions for ordered data and the monotone approximating sequence.

Both equations of a pair are solved on the same eta ensemble, so the almost
sure ordering Y1 <= Y2 can be checked particle by particle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import GeneratorClassError, HypothesisViolation
from .solver import (
    ARGUMENTS,
    EtaModel,
    GeneratorSpec,
    SolutionField,
    SolverConfig,
    TerminalSpec,
    picard_solve,
    resolve_beta,
    weighted_distance,
)
from .timegrid import DelaySpec

_ALLOWED_ARGS = frozenset({"t", "x", "y", "z", "theta_p"})
SPOT_CHECKS = 1000


@dataclass
class ComparisonCase:
    """Two drivers f(t, x, y, z, theta') with f1 <= f2 and terminals g1 <= g2.

    ``increasing`` declares f1 nondecreasing in theta'; it is spot-checked,
    not proved.
    """

    gen1: GeneratorSpec
    gen2: GeneratorSpec
    terminal1: TerminalSpec
    terminal2: TerminalSpec
    increasing: bool = True

    def __post_init__(self):
        for g in (self.gen1, self.gen2):
            if not g.uses <= _ALLOWED_ARGS:
                raise GeneratorClassError(
                    f"comparison drivers read only {sorted(_ALLOWED_ARGS)}, got {sorted(g.uses)}"
                )


@dataclass
class OrderingReport:
    times: np.ndarray
    violation_fraction: np.ndarray
    max_violation: np.ndarray
    eps_reg: float
    field1: SolutionField = field(repr=False)
    field2: SolutionField = field(repr=False)
    threshold: float = 1e-3

    @property
    def passed(self) -> bool:
        return bool(np.all(self.violation_fraction <= self.threshold))

    def rows(self):
        for i, t in enumerate(self.times):
            yield i, t, self.violation_fraction[i], self.max_violation[i]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "time", "violation_fraction", "max_violation"])
            for i, t, v, m in self.rows():
                w.writerow([i, f"{t:.17g}", f"{v:.17g}", f"{m:.17g}"])


def _call(gen: GeneratorSpec, **kw) -> np.ndarray:
    args = [kw.get(a, 0.0) for a in ARGUMENTS]
    return np.asarray(gen.f(*args), dtype=float)


def _spot_check(case: ComparisonCase, eta: EtaModel, seed: int) -> None:
    rng = np.random.default_rng(seed)
    grid = eta.grid
    n = grid.n
    x_all = eta.values[:, : n + 1]
    gx = eta.values[:, n:].ravel()
    if np.any(case.terminal1.Y(gx) > case.terminal2.Y(gx)):
        raise HypothesisViolation("g1 <= g2 fails on the sampled eta range")

    lo, hi = float(x_all.min()), float(x_all.max())
    k = SPOT_CHECKS
    t = rng.choice(grid.nodes[: n + 1], k)
    x = rng.uniform(lo, hi, k)
    y = rng.uniform(-5, 5, k)
    z = rng.uniform(-5, 5, k)
    th = rng.uniform(-5, 5, k)
    f1 = np.broadcast_to(_call(case.gen1, t=t, x=x, y=y, z=z, theta_p=th), (k,))
    f2 = np.broadcast_to(_call(case.gen2, t=t, x=x, y=y, z=z, theta_p=th), (k,))
    if np.any(f1 > f2 + 1e-12):
        raise HypothesisViolation("f1 <= f2 fails at sampled arguments")
    if case.increasing and "theta_p" in case.gen1.uses:
        th2 = th + rng.uniform(0, 5, k)
        f1b = np.broadcast_to(_call(case.gen1, t=t, x=x, y=y, z=z, theta_p=th2), (k,))
        if np.any(f1b < f1 - 1e-12):
            raise HypothesisViolation("f1 is not increasing in theta' at sampled arguments")


def eps_reg(*fields: SolutionField) -> float:
    """Ordering slack: three times the largest regression residual RMS."""
    return 3.0 * max(f.residual_scale() for f in fields)


def solve_ordered_pair(case: ComparisonCase, eta: EtaModel, delays: DelaySpec,
                       cfg: SolverConfig | None = None, seed: int = 0,
                       threshold: float = 1e-3) -> OrderingReport:
    """Solve both equations on one ensemble and count Y1 > Y2 + eps_reg per node."""
    cfg = cfg or SolverConfig()
    _spot_check(case, eta, seed)
    f1 = picard_solve(case.gen1, case.terminal1, eta, delays, cfg)
    f2 = picard_solve(case.gen2, case.terminal2, eta, delays, cfg)
    eps = eps_reg(f1, f2)
    excess = f1.Y - f2.Y - eps
    frac = np.mean(excess > 0, axis=0)
    mag = np.maximum(excess.max(axis=0), 0.0)
    return OrderingReport(eta.grid.nodes.copy(), frac, mag, eps, f1, f2, threshold)


@dataclass
class MonotoneReport:
    fields: list = field(repr=False)
    max_increase: np.ndarray
    distance_to_limit: np.ndarray
    eps_reg: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.max_increase <= self.eps_reg))


def monotone_sequence(case: ComparisonCase, seed_field: SolutionField, eta: EtaModel,
                      delays: DelaySpec, n: int = 5, cfg: SolverConfig | None = None,
                      limit: SolutionField | None = None) -> MonotoneReport:
    """Y~_0 = seed_field, Y~_k solves equation 1 with theta' frozen at Y~_{k-1}.

    Reports max over nodes and particles of (Y~_k - Y~_{k-1})^+ for k = 1..n
    and the weighted distance of each Y~_k to ``limit`` (by default the
    Picard solution of equation 1).
    """
    cfg = cfg or SolverConfig()
    if not case.increasing:
        raise HypothesisViolation("monotone construction needs f1 increasing in theta'")
    seq = [seed_field]
    for _ in range(n):
        seq.append(picard_solve(case.gen1, case.terminal1, eta, delays, cfg, anticipation_source=seq[-1]))
    if limit is None:
        limit = picard_solve(case.gen1, case.terminal1, eta, delays, cfg)
    beta = resolve_beta(case.gen1, delays, eta, cfg)
    inc = np.array([float(np.max(seq[k].Y - seq[k - 1].Y)) for k in range(1, n + 1)])
    dist = np.array([float(np.hypot(*weighted_distance(seq[k], limit, beta))) for k in range(1, n + 1)])
    return MonotoneReport(seq, np.maximum(inc, 0.0), dist, eps_reg(*seq))
