"""Backward solver for mean-field anticipated BSDEs driven by fBm.

The solution is sought in the form Y_t = u(t, eta_t), Z_t = sigma_t u_x(t, eta_t)
with u(t_i, .) a polynomial of fixed degree fitted by least squares on the
particle cloud of eta_{t_i}. Conditional expectations given F_t are the
quasi-conditional expectations of the fractional calculus: a polynomial in
eta_{t_j} is pushed back to t_i < t_j through the Gaussian transition with
mean int b and variance ||sigma||^2_{t_j} - ||sigma||^2_{t_i}, under which
drift-free solutions keep a constant mean.

Each Picard sweep freezes every driver argument at the previous iterate and
integrates the driver with the trapezoidal rule.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np

from .errors import ConvergenceError, GeneratorClassError, GridMismatchError, PreconditionError
from .forward import EtaSpec, simulate_eta
from .kernel import KernelMatrix, m_bound
from .paths import Label, PathEnsemble
from .timegrid import DelaySpec, TimeGrid, shift_indices, validate_delays

ARGUMENTS = ("t", "x", "y_p", "z_p", "y", "z", "theta_p", "zeta_p", "theta", "zeta")
_PRIMED = {"y_p", "z_p", "theta_p", "zeta_p"}


class GeneratorClass(str, enum.Enum):
    PLAIN = "PLAIN"
    MEAN_FIELD = "MEAN_FIELD"
    ANTICIPATED = "ANTICIPATED"
    MEAN_FIELD_ANTICIPATED = "MEAN_FIELD_ANTICIPATED"
    DETERMINISTIC_ANTICIPATED = "DETERMINISTIC_ANTICIPATED"


_ALLOWED = {
    GeneratorClass.PLAIN: {"t", "x", "y", "z"},
    GeneratorClass.MEAN_FIELD: {"t", "x", "y_p", "z_p", "y", "z"},
    GeneratorClass.ANTICIPATED: {"t", "x", "y", "z", "theta", "zeta"},
    GeneratorClass.MEAN_FIELD_ANTICIPATED: set(ARGUMENTS),
    GeneratorClass.DETERMINISTIC_ANTICIPATED: {"t", "theta_p", "zeta_p"},
}


@dataclass
class GeneratorSpec:
    """Driver f(t, x, y', z', y, z, theta', zeta', theta, zeta).

    ``f`` must be numpy-vectorized and is always called positionally with all
    ten arguments; arguments outside ``uses`` are passed as 0.0. Primed
    arguments are samples of an independent copy and are averaged out
    (E'); when ``affine_in_primed`` is set the copy average is taken before
    the call, otherwise f is evaluated on all particle/copy pairs.
    Non-primed anticipated arguments are replaced by their conditional
    expectation given F_t when ``conditional`` is set.
    """

    f: Callable
    lipschitz_C: float
    cls: GeneratorClass
    uses: frozenset = frozenset({"t", "x"})
    affine_in_primed: bool = False
    conditional: bool = True

    def __post_init__(self):
        self.cls = GeneratorClass(self.cls)
        self.uses = frozenset(self.uses)
        if self.lipschitz_C < 0:
            raise PreconditionError("lipschitz_C must be nonnegative")
        unknown = self.uses - set(ARGUMENTS)
        if unknown:
            raise PreconditionError(f"unknown driver arguments {sorted(unknown)}")
        extra = self.uses - _ALLOWED[self.cls]
        if extra:
            raise GeneratorClassError(f"class {self.cls.value} cannot read {sorted(extra)}")

    @property
    def is_constant_map(self) -> bool:
        """True when the driver ignores the unknown (Y, Z) entirely."""
        return self.uses <= {"t", "x"}

    @property
    def anticipates(self) -> bool:
        return bool(self.uses & {"theta_p", "zeta_p", "theta", "zeta"})


def zero_generator() -> GeneratorSpec:
    return GeneratorSpec(lambda *a: 0.0, 0.0, GeneratorClass.PLAIN, frozenset({"t"}))


@dataclass
class TerminalSpec:
    """Terminal data Y = g(eta), Z = h(eta) on [T, T + K]."""

    g: Callable
    h: Callable = lambda x: np.zeros_like(np.asarray(x, dtype=float))

    def Y(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.g(x), dtype=float), x.shape).astype(float)

    def Z(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.h(x), dtype=float), x.shape).astype(float)


@dataclass
class SolverConfig:
    degree: int = 2
    picard_max: int = 50
    tol: float = 1e-6
    beta: float | None = None
    min_iterations: int = 1
    mean_field_copies: int | None = None


# ---------------------------------------------------------------------------
# Gaussian driver model


class EtaModel:
    """An eta ensemble together with the deterministic data the solver needs.

    Attributes
    ----------
    paths : PathEnsemble
    sigma, b : ndarray
        Node tabulations of the volatility and drift.
    variance : ndarray
        Var(eta_{t_i}) of the discrete Wiener sums, exact on the grid.
    """

    def __init__(self, paths: PathEnsemble, sigma, b, kernel: KernelMatrix):
        if not paths.grid.same_as(kernel.grid):
            raise GridMismatchError("eta ensemble and kernel use different grids")
        self.paths = paths
        self.kernel = kernel
        self.grid = paths.grid
        self.H = kernel.H
        self.sigma = kernel.tabulate(sigma)
        self.b = kernel.tabulate(b)
        s = self.sigma[:-1]
        W = kernel.phi_weights
        ws = W * s[None, :] * s[:, None]
        # Var of sum_{l<i} sigma_l dB_l = leading i x i block sum.
        csum = np.cumsum(np.cumsum(ws, axis=0), axis=1)
        self.variance = np.concatenate([[0.0], np.diag(csum)])
        self.mean_shift = np.concatenate([[0.0], np.cumsum(self.b[:-1] * self.grid.step)])

    @classmethod
    def simulate(cls, spec: EtaSpec, fbm: PathEnsemble, kernel: KernelMatrix) -> "EtaModel":
        eta = simulate_eta(spec, fbm)
        b, s = spec.tabulate(fbm.grid)
        return cls(eta, s, b, kernel)

    @classmethod
    def from_state(cls, state: PathEnsemble, sigma, kernel: KernelMatrix) -> "EtaModel":
        """Use a simulated state (deterministic drift) as the Gaussian driver."""
        if state.drift is None:
            raise PreconditionError("state ensemble carries no drift tabulation")
        b = np.append(state.drift, state.drift[-1])
        paths = PathEnsemble(state.grid, state.values, Label.ETA, seed=state.seed, drift=state.drift)
        return cls(paths, sigma, b, kernel)

    @property
    def values(self) -> np.ndarray:
        return self.paths.values

    @property
    def N(self) -> int:
        return self.paths.particle_count

    def transition(self, i: int, j: int) -> tuple[float, float]:
        """Mean shift and variance of eta_{t_j} - eta_{t_i} in the Markov surrogate."""
        return (
            float(self.mean_shift[j] - self.mean_shift[i]),
            float(max(self.variance[j] - self.variance[i], 0.0)),
        )

    def norm_growth_ok(self) -> bool:
        return bool(np.all(np.diff(self.variance[: self.grid.n + 1]) > 0))


# ---------------------------------------------------------------------------
# polynomial algebra on raw monomial coefficients (lowest degree first)


def polyval(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(x, coef)


def polyder(coef: np.ndarray) -> np.ndarray:
    d = np.polynomial.polynomial.polyder(coef)
    return np.pad(d, (0, len(coef) - len(d)))


def gaussian_pushforward(coef: np.ndarray, mean: float, var: float) -> np.ndarray:
    """Coefficients of x -> E[p(x + mean + sqrt(var) xi)], xi ~ N(0, 1)."""
    d = len(coef) - 1
    mom = np.zeros(d + 1)
    mom[0] = 1.0
    if d >= 1:
        mom[1] = mean
    for r in range(2, d + 1):
        mom[r] = mean * mom[r - 1] + (r - 1) * var * mom[r - 2]
    out = np.zeros(d + 1)
    for k in range(d + 1):
        if coef[k] == 0:
            continue
        for j in range(k + 1):
            out[j] += coef[k] * comb(k, j) * mom[k - j]
    return out


def _fit(targets: np.ndarray, x: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares polynomial fit returning (fitted, raw coefficients padded to degree)."""
    c = float(x.mean())
    s = float(x.std())
    if s <= 1e-12 * (1.0 + abs(c)):
        coef = np.zeros(degree + 1)
        coef[0] = float(targets.mean())
        return np.full_like(targets, coef[0], dtype=float), coef
    z = (x - c) / s
    d = degree
    while True:
        V = np.vander(z, d + 1, increasing=True)
        sol, _, rank, _ = np.linalg.lstsq(V, targets, rcond=None)
        if rank == d + 1 or d == 0:
            break
        warnings.warn(f"rank-deficient regression design; degree reduced to {d - 1}", stacklevel=3)
        d -= 1
    raw = np.polynomial.polynomial.Polynomial(sol)(np.polynomial.polynomial.Polynomial([-c / s, 1 / s]))
    coef = np.zeros(degree + 1)
    coef[: len(raw.coef)] = raw.coef[: degree + 1]
    return V @ sol, coef


def conditional_expectation(
    targets,
    regressors,
    degree: int,
    *,
    source=None,
    mean: float = 0.0,
    var: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Polynomial regression estimate of E[target | regressor].

    Without ``source`` this is the least-squares projection of ``targets`` on
    {1, x, ..., x^degree} evaluated at ``regressors``. With ``source`` (the
    eta values at the targets' own node) the targets are first fitted on
    ``source`` and the fit is pushed back through a Gaussian increment with
    the given ``mean`` and ``var``: the quasi-conditional expectation.

    Returns
    -------
    fitted : ndarray
        Per-particle values at the regressors.
    coef : ndarray
        Raw monomial coefficients, lowest degree first.
    """
    targets = np.asarray(targets, dtype=float)
    regressors = np.asarray(regressors, dtype=float)
    if targets.size <= degree + 1:
        raise PreconditionError("need more particles than basis functions")
    if source is None:
        return _fit(targets, regressors, degree)
    _, coef = _fit(targets, np.asarray(source, dtype=float), degree)
    coef = gaussian_pushforward(coef, mean, var)
    return polyval(coef, regressors), coef


def mean_field_expectation(values) -> float:
    """E'[.] over an independent copy: the ensemble mean."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise PreconditionError("empty ensemble")
    return float(v.mean())


# ---------------------------------------------------------------------------
# solution field


@dataclass
class SolutionField:
    """Y and Z on every node plus the polynomial representation of u.

    ``ycoef[i]`` represents Y_{t_i} = u_i(eta_{t_i}); ``zcoef[i]`` represents
    Z_{t_i}. On extension nodes (index >= grid.n) ``Y``/``Z`` hold the
    terminal functions verbatim and the coefficients are their projections.
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    ycoef: np.ndarray
    zcoef: np.ndarray
    residual: np.ndarray
    H: float
    diagnostics: list = field(default_factory=list)
    iterations: int = 0

    @property
    def degree(self) -> int:
        return self.ycoef.shape[1] - 1

    def mean_Y(self) -> np.ndarray:
        return self.Y.mean(axis=0)

    def residual_scale(self) -> float:
        return float(np.max(self.residual))


def extend_terminal(terminal: TerminalSpec, eta: EtaModel, degree: int) -> SolutionField:
    """Field with Y = g(eta), Z = h(eta) on [T, T + K] and zeros before T."""
    grid = eta.grid
    N, size = eta.values.shape
    Y = np.zeros((N, size))
    Z = np.zeros((N, size))
    ycoef = np.zeros((size, degree + 1))
    zcoef = np.zeros((size, degree + 1))
    residual = np.zeros(size)
    for j in range(grid.n, size):
        x = eta.values[:, j]
        Y[:, j] = terminal.Y(x)
        Z[:, j] = terminal.Z(x)
        fy, ycoef[j] = _fit(Y[:, j], x, degree)
        _, zcoef[j] = _fit(Z[:, j], x, degree)
        residual[j] = float(np.sqrt(np.mean((fy - Y[:, j]) ** 2)))
    return SolutionField(grid, Y, Z, ycoef, zcoef, residual, eta.H)


def extract_z(field: SolutionField, sigma, node: int, eta: EtaModel) -> np.ndarray:
    """Z_{t_i} = sigma_{t_i} u_i'(eta_{t_i}) from the fitted polynomial."""
    sig = eta.kernel.tabulate(sigma)
    return sig[node] * polyval(polyder(field.ycoef[node]), eta.values[:, node])


def _trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.size, grid.step)
    w[0] = w[-1] = 0.5 * grid.step
    return w


def weighted_distance(a: SolutionField, b: SolutionField, beta: float, grid: TimeGrid | None = None,
                      H: float | None = None) -> tuple[float, float]:
    """Distances in the e^(beta t) and t^(2H-1) e^(beta t) norms over [0, T + K]."""
    grid = grid or a.grid
    if not (a.grid.same_as(grid) and b.grid.same_as(grid)):
        raise GridMismatchError("fields use different grids")
    H = a.H if H is None else H
    t = grid.nodes
    w = _trapezoid_weights(grid) * np.exp(beta * t)
    dy = np.mean((a.Y - b.Y) ** 2, axis=0)
    dz = np.mean((a.Z - b.Z) ** 2, axis=0)
    return (
        float(np.sqrt(w @ dy)),
        float(np.sqrt((w * t ** (2 * H - 1)) @ dz)),
    )


def weighted_norm(a: SolutionField, beta: float) -> float:
    t = a.grid.nodes
    w = _trapezoid_weights(a.grid) * np.exp(beta * t)
    return float(np.sqrt(w @ np.mean(a.Y**2, axis=0) + (w * t ** (2 * a.H - 1)) @ np.mean(a.Z**2, axis=0)))


def default_beta(gen: GeneratorSpec, L: float, M: float) -> float:
    """beta = 32 C^2 (L + 1) M + 4 / M."""
    return 32.0 * gen.lipschitz_C**2 * (L + 1.0) * M + 4.0 / M


# ---------------------------------------------------------------------------
# driver evaluation


class _DriverContext:
    def __init__(self, gen: GeneratorSpec, eta: EtaModel, delays: DelaySpec, cfg: SolverConfig):
        self.gen = gen
        self.eta = eta
        self.cfg = cfg
        grid = eta.grid
        self.jd = shift_indices(lambda t: delays.delta_at(t), grid) if gen.uses & {"theta", "theta_p"} else None
        self.jz = shift_indices(lambda t: delays.zeta_at(t), grid) if gen.uses & {"zeta", "zeta_p"} else None

    def _copies(self, v: np.ndarray) -> np.ndarray:
        k = self.cfg.mean_field_copies
        if k is None or k >= v.size:
            return v
        return v[:: int(math.ceil(v.size / k))]

    def evaluate(self, i: int, prev: SolutionField, source: SolutionField) -> np.ndarray:
        """Driver values per particle at node i with arguments frozen at ``prev``.

        Anticipated arguments are read from ``source`` (normally ``prev``).
        """
        gen, eta = self.gen, self.eta
        uses = gen.uses
        N = eta.N
        t = float(eta.grid.nodes[i])
        x = eta.values[:, i]
        args = dict.fromkeys(ARGUMENTS, 0.0)
        args["t"] = t
        if "x" in uses:
            args["x"] = x
        if "y" in uses:
            args["y"] = prev.Y[:, i]
        if "z" in uses:
            args["z"] = prev.Z[:, i]
        if "y_p" in uses:
            args["y_p"] = prev.Y[:, i]
        if "z_p" in uses:
            args["z_p"] = prev.Z[:, i]
        if "theta_p" in uses:
            args["theta_p"] = source.Y[:, self.jd[i]]
        if "zeta_p" in uses:
            args["zeta_p"] = source.Z[:, self.jz[i]]
        for name, idx, coefs in (("theta", self.jd, source.ycoef), ("zeta", self.jz, source.zcoef)):
            if name not in uses:
                continue
            j = idx[i]
            if gen.conditional and j > i:
                mean, var = eta.transition(i, j)
                args[name] = polyval(gaussian_pushforward(coefs[j], mean, var), x)
            else:
                args[name] = (source.Y if name == "theta" else source.Z)[:, j]

        primed = [a for a in _PRIMED if a in uses]
        if not primed:
            out = gen.f(*(args[a] for a in ARGUMENTS))
        elif gen.affine_in_primed:
            for a in primed:
                args[a] = mean_field_expectation(args[a])
            out = gen.f(*(args[a] for a in ARGUMENTS))
        else:
            out = self._pairwise(args, primed)
        return np.broadcast_to(np.asarray(out, dtype=float), (N,)).astype(float)

    def _pairwise(self, args: dict, primed: list) -> np.ndarray:
        N = self.eta.N
        copies = {a: self._copies(np.asarray(args[a], dtype=float))[None, :] for a in primed}
        out = np.empty(N)
        chunk = max(1, 2_000_000 // next(iter(copies.values())).size)
        for a0 in range(0, N, chunk):
            sl = slice(a0, min(a0 + chunk, N))
            local = {}
            for name in ARGUMENTS:
                v = args[name]
                if name in copies:
                    local[name] = copies[name]
                elif np.ndim(v) == 1:
                    local[name] = v[sl, None]
                else:
                    local[name] = v
            vals = self.gen.f(*(local[a] for a in ARGUMENTS))
            vals = np.broadcast_to(np.asarray(vals, dtype=float), (sl.stop - sl.start, copies[primed[0]].size))
            out[sl] = vals.mean(axis=1)
        return out


def _backward_sweep(ctx: _DriverContext, terminal_field: SolutionField, prev: SolutionField,
                    source: SolutionField | None) -> SolutionField:
    """One application of the frozen-argument map.

    With ``source=None`` anticipated arguments are read from the field under
    construction, which is valid when every shift points strictly forward.
    """
    eta = ctx.eta
    grid = eta.grid
    n = grid.n
    h = grid.step
    deg = terminal_field.degree
    Y = terminal_field.Y.copy()
    Z = terminal_field.Z.copy()
    ycoef = terminal_field.ycoef.copy()
    zcoef = terminal_field.zcoef.copy()
    residual = terminal_field.residual.copy()
    out = SolutionField(grid, Y, Z, ycoef, zcoef, residual, eta.H)
    source = out if source is None else source

    f_next = ctx.evaluate(n, prev, source)
    fit_next, p_next = _fit(f_next, eta.values[:, n], deg)
    res_next = float(np.sqrt(np.mean((fit_next - f_next) ** 2)))
    q = ycoef[n] + 0.5 * h * p_next
    for i in range(n - 1, -1, -1):
        x = eta.values[:, i]
        mean, var = eta.transition(i, i + 1)
        f_i = ctx.evaluate(i, prev, source)
        fit_i, p_i = _fit(f_i, x, deg)
        res_i = float(np.sqrt(np.mean((fit_i - f_i) ** 2)))
        u = gaussian_pushforward(q, mean, var) + 0.5 * h * p_i
        ycoef[i] = u
        zcoef[i] = eta.sigma[i] * polyder(u)
        Y[:, i] = polyval(u, x)
        Z[:, i] = polyval(zcoef[i], x)
        residual[i] = max(res_i, res_next * h)
        q = u + 0.5 * h * p_i
        res_next = res_i
    return out


def resolve_beta(gen: GeneratorSpec, delays: DelaySpec, eta: EtaModel, cfg: SolverConfig) -> float:
    if cfg.beta is not None:
        return float(cfg.beta)
    L = validate_delays(delays, eta.grid)
    M = m_bound(eta.sigma, eta.kernel)
    return default_beta(gen, L, M)


def _converged(new: SolutionField, old: SolutionField, total: float, beta: float, tol: float) -> bool:
    # e^(beta t) spans many orders of magnitude, so the weighted test alone
    # cannot see early times; the unweighted distance must be small as well.
    if total > tol * max(weighted_norm(new, beta), 1e-300):
        return False
    plain = math.hypot(*weighted_distance(new, old, 0.0))
    return plain <= tol * max(weighted_norm(new, 0.0), 1.0)


def picard_solve(
    gen: GeneratorSpec,
    terminal: TerminalSpec,
    eta: EtaModel,
    delays: DelaySpec,
    cfg: SolverConfig | None = None,
    *,
    anticipation_source: SolutionField | None = None,
) -> SolutionField:
    """Picard iteration of the frozen-argument solution map.

    Iterates until the weighted distance between successive iterates is at
    most ``cfg.tol`` times the weighted norm of the newest iterate, and the
    same holds for the unweighted (beta = 0) distance. The
    per-iteration distances and contraction ratios are stored on the
    returned field's ``diagnostics``.
    """
    cfg = cfg or SolverConfig()
    validate_delays(delays, eta.grid)
    beta = resolve_beta(gen, delays, eta, cfg)
    ctx = _DriverContext(gen, eta, delays, cfg)
    base = extend_terminal(terminal, eta, cfg.degree)
    prev = base
    history = []
    max_iter = 1 if gen.is_constant_map and cfg.min_iterations <= 1 else cfg.picard_max
    for k in range(1, max_iter + 1):
        src = anticipation_source if anticipation_source is not None else prev
        new = _backward_sweep(ctx, base, prev, src)
        prev_old = prev
        dY, dZ = weighted_distance(new, prev, beta)
        total = math.hypot(dY, dZ)
        ratio = total / history[-1]["total"] if history and history[-1]["total"] > 0 else float("nan")
        history.append({"iteration": k, "dY": dY, "dZ": dZ, "total": total, "ratio": ratio})
        prev = new
        if gen.is_constant_map and k >= cfg.min_iterations:
            break
        if k >= cfg.min_iterations and _converged(new, prev_old, total, beta, cfg.tol):
            break
    else:
        if not gen.is_constant_map:
            raise ConvergenceError(
                f"Picard iteration did not converge in {cfg.picard_max} iterations", history
            )
    prev.diagnostics = history
    prev.iterations = len(history)
    return prev


# ---------------------------------------------------------------------------
# a-priori estimate for drivers f(s, eta_s)


@dataclass
class AprioriReport:
    lhs: float
    rhs: float
    ratio: float
    se: float
    passed: bool


def apriori_check(field: SolutionField, gen: GeneratorSpec, terminal: TerminalSpec, beta: float,
                  M: float, eta: EtaModel) -> AprioriReport:
    """Both sides of the a-priori estimate at t = 0 by ensemble averages.

    LHS = E(|Y_0|^2 + beta/2 int e^(beta s)|Y_s|^2 + 2/M int s^(2H-1) e^(beta s)|Z_s|^2),
    RHS = E(e^(beta T)|g(eta_T)|^2 + 2/beta int e^(beta s)|f(s, eta_s)|^2).
    Passes when LHS/RHS <= 1 + 5 standard errors (delta method).
    """
    if gen.cls is not GeneratorClass.PLAIN or gen.uses - {"t", "x"}:
        raise GeneratorClassError("the a-priori estimate applies to drivers f(s, eta_s) only")
    grid = eta.grid
    n = grid.n
    t = grid.nodes[: n + 1]
    w = np.full(n + 1, grid.step)
    w[0] = w[-1] = 0.5 * grid.step
    ew = w * np.exp(beta * t)
    Y = field.Y[:, : n + 1]
    Z = field.Z[:, : n + 1]
    lhs_p = Y[:, 0] ** 2 + 0.5 * beta * (Y**2) @ ew + (2.0 / M) * (Z**2) @ (ew * t ** (2 * field.H - 1))
    fvals = np.column_stack([
        np.broadcast_to(np.asarray(gen.f(float(t[i]), eta.values[:, i], *([0.0] * 8)), dtype=float), (eta.N,))
        for i in range(n + 1)
    ])
    rhs_p = math.exp(beta * grid.T) * terminal.Y(eta.values[:, n]) ** 2 + (2.0 / beta) * (fvals**2) @ ew
    lhs, rhs = float(lhs_p.mean()), float(rhs_p.mean())
    if rhs == 0.0:
        return AprioriReport(lhs, rhs, 0.0 if lhs == 0 else math.inf, 0.0, lhs == 0.0)
    ratio = lhs / rhs
    # delta-method SE of a ratio of means
    d = (lhs_p - ratio * rhs_p) / rhs
    se = float(d.std(ddof=1) / math.sqrt(len(d)))
    return AprioriReport(lhs, rhs, ratio, se, ratio <= 1.0 + 5.0 * se)


def theorem_estimate_curve(field: SolutionField, gen: GeneratorSpec, terminal: TerminalSpec,
                           beta: float, eta: EtaModel) -> np.ndarray:
    """Left side of the stability bound over t in [0, T] (reported, not asserted).

    Returns rows (t, lhs(t), theta(t)) where theta is the data functional
    multiplying the unspecified constant.
    """
    grid = eta.grid
    n = grid.n
    t = grid.nodes
    w = _trapezoid_weights(grid) * np.exp(beta * t)
    z2 = np.mean(field.Z**2, axis=0) * t ** (2 * field.H - 1)
    y2 = np.mean(field.Y**2, axis=0)
    x = eta.values
    f0 = np.array([
        np.mean(np.broadcast_to(np.asarray(gen.f(float(t[i]), x[:, i], *([0.0] * 8)), dtype=float), (eta.N,)) ** 2)
        for i in range(n + 1)
    ])
    g2 = np.mean(terminal.Y(x[:, n:]) ** 2, axis=0)
    h2 = np.mean(terminal.Z(x[:, n:]) ** 2, axis=0)
    ext = (w[n:] * (g2 + t[n:] ** (2 * field.H - 1) * h2)).sum() - 0.5 * w[n] * (g2[0] + t[n] ** (2 * field.H - 1) * h2[0])
    rows = []
    for i in range(n + 1):
        lhs = math.exp(beta * t[i]) * y2[i] + float((w[i : n + 1] * z2[i : n + 1]).sum())
        theta = math.exp(beta * grid.T) * g2[0] + float((w[i : n + 1] * f0[i:]).sum()) + float(ext)
        rows.append((float(t[i]), lhs, theta))
    return np.array(rows)


def solve_forward_anticipated(gen: GeneratorSpec, terminal: TerminalSpec, eta: EtaModel,
                              delays: DelaySpec, cfg: SolverConfig | None = None) -> SolutionField:
    """Single backward pass for drivers that read the unknown only at later times.

    Walking backwards, every anticipated value t + delta(t) > t is final
    before it is needed, so the delay intervals are resolved one after the
    other inside one sweep.
    """
    cfg = cfg or SolverConfig()
    if gen.uses & {"y", "z", "y_p", "z_p"}:
        raise PreconditionError("driver reads the unknown at the current time")
    validate_delays(delays, eta.grid)
    ctx = _DriverContext(gen, eta, delays, cfg)
    n = eta.grid.n
    for idx in (ctx.jd, ctx.jz):
        if idx is not None and np.any(idx[:n] <= np.arange(n)):
            raise PreconditionError("anticipation shifts must point strictly forward")
    base = extend_terminal(terminal, eta, cfg.degree)
    out = _backward_sweep(ctx, base, base, None)
    out.iterations = 1
    return out
