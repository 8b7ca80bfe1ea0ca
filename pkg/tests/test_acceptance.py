"""Acceptance criteria 1-13, each pinned to its stated tolerance.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line. Experiments run
through the same config path as the CLI with a common seed.
"""

import time

import numpy as np
import pytest

from fracbsde.cli import config_from_mapping, run_experiment
from fracbsde.experiments import EXPERIMENTS

SEED = 20240101
_cache = {}


def _run(name, **over):
    key = (name, repr(sorted(over.items())))
    if key not in _cache:
        cfg = config_from_mapping({"experiment": name, "seed": SEED, **over})
        t0 = time.perf_counter()
        out = EXPERIMENTS[name](cfg)
        _cache[key] = (out, time.perf_counter() - t0)
    return _cache[key]


def _value(outcome, name):
    (c,) = [c for c in outcome.criteria if c.name == name]
    return c.value


def _report(capsys, n, checks, runtime, budget):
    checks = dict(checks)
    checks[f"runtime {runtime:.1f}s < {budget}s"] = runtime < budget
    ok = all(checks.values())
    detail = "; ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items())
    with capsys.disabled():
        print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_kernel_identity(capsys):
    out, rt = _run("kernel-identities", params={"H_values": [0.55, 0.75, 0.9], "T_values": [1.0, 2.0], "cells": 256})
    rows = out.tables["inner_products"].rows
    assert {(r[0], r[1]) for r in rows} == {(H, T) for H in (0.55, 0.75, 0.9) for T in (1.0, 2.0)}
    worst = max(abs(r[2] - r[1] ** (2 * r[0])) / r[1] ** (2 * r[0]) for r in rows)
    _report(capsys, 1, {f"max rel err {worst:.2e} <= 1e-6": worst <= 1e-6}, rt, 5)


def test_criterion_02_fbm_law(capsys):
    out, rt = _run("fbm-stats", N=50000, H=0.75, T=1.0)
    z = max(abs(r[7]) for r in out.tables["covariance"].rows)
    b0 = _value(out, "max |B_0|")
    _report(capsys, 2, {f"max |z| {z:.2f} <= 5": z <= 5.0, "B_0 == 0": b0 == 0.0}, rt, 30)


def test_criterion_03_wiener_moments(capsys):
    out, rt = _run("fbm-stats", N=50000, H=0.75, T=1.0)
    checks = {}
    for f, mean, se_m, var, exact, se_v in out.tables["moments"].rows:
        checks[f"f={f} |mean|/SE {abs(mean) / se_m:.2f} <= 4"] = abs(mean) <= 4 * se_m
        checks[f"f={f} |var-norm|/SE {abs(var - exact) / se_v:.2f} <= 3"] = abs(var - exact) <= 3 * se_v
    assert len(checks) == 6
    _report(capsys, 3, checks, rt, 30)


def test_criterion_04_ito_residual(capsys):
    out, rt = _run("ito-check", params={"steps": [32, 64, 128]})
    means = [r[2] for r in out.tables["residuals"].rows]
    ratio = means[0] / means[-1]
    _report(capsys, 4, {"monotone decrease": means[0] > means[1] > means[2],
                        f"ratio {ratio:.2f} >= 2.5": ratio >= 2.5}, rt, 60)


def _bench():
    return _run("solver-benchmarks", N=20000, H=0.75, T=1.0, K=0.25, dt=1 / 64, degree=2)


def test_criterion_05_trivial_solver(capsys):
    out, rt = _bench()
    y, z, it = (_value(out, k) for k in ("trivial: max |Y - c|", "trivial: max |Z|", "trivial: Picard iterations"))
    _report(capsys, 5, {f"|Y-3| {y:.1e} <= 1e-10": y <= 1e-10, f"|Z| {z:.1e} <= 1e-10": z <= 1e-10,
                        "one iteration": it == 1}, rt, 10 + 120 + 60 + 60)


def test_criterion_06_closed_form(capsys):
    out, rt = _bench()
    rows = out.tables["closed_form"].rows
    ey = max(r[2] for r in rows)
    ez = max(r[3] for r in rows if r[1] >= 0.1 - 1e-12)
    _report(capsys, 6, {f"RMS |Y-eta| {ey:.1e} <= 0.02": ey <= 0.02,
                        f"RMS |Z-1| {ez:.1e} <= 0.05": ez <= 0.05}, rt, 120 + 10 + 60 + 60)


def test_criterion_07_anticipated(capsys):
    out, rt = _bench()
    rows = out.tables["anticipated"].rows
    t = np.array([r[1] for r in rows])
    y = np.array([r[2] for r in rows])
    oracle = np.array([r[3] for r in rows])
    i0 = int(np.argmin(np.abs(t - 0.75)))
    e0 = abs(y[i0] - 1.25)
    ec = float(np.max(np.abs(y - oracle)))
    _report(capsys, 7, {f"|Y(T-d)-1.25| {e0:.1e} <= 1e-3": e0 <= 1e-3,
                        f"curve err {ec:.1e} <= 1e-3": ec <= 1e-3}, rt, 60 + 10 + 120 + 60)


def test_criterion_08_contraction(capsys):
    out, rt = _run("contraction", N=20000, H=0.75, T=1.0, K=0.25, dt=1 / 64, degree=2)
    checks = {}
    for bench in ("closed_form", "anticipated"):
        rows = [r for r in out.tables["picard"].rows if r[0] == bench]
        tot = [r[4] for r in rows]
        checks[f"{bench} strictly decreasing"] = all(b < a for a, b in zip(tot, tot[1:]))
        checks[f"{bench} final/first {tot[-1] / tot[0]:.1e} <= 0.1"] = tot[-1] / tot[0] <= 0.1
        checks[f"{bench} iterations {len(tot)} <= 6"] = len(tot) <= 6
    _report(capsys, 8, checks, rt, 180)


def test_criterion_09_apriori(capsys):
    out, rt = _bench()
    beta, M, lhs, rhs, ratio, se = out.tables["apriori"].rows[0]
    _report(capsys, 9, {f"ratio {ratio:.3f} <= 1 + 5 SE": ratio <= 1 + 5 * se}, rt, 60 + 10 + 120 + 60)


def _comparison():
    return _run("comparison", N=20000, H=0.75, T=1.0, K=0.25, dt=1 / 64, degree=2)


def test_criterion_10_comparison(capsys):
    out, rt = _comparison()
    frac = max(r[2] for r in out.tables["ordering"].rows)
    shift = _value(out, "shifted terminal: max |Y2 - Y1 - shift|")
    _report(capsys, 10, {f"violation fraction {frac:.1e} <= 1e-3": frac <= 1e-3,
                         f"shift err {shift:.1e} <= 1e-8": shift <= 1e-8}, rt, 180 + 180)


def test_criterion_11_monotone(capsys):
    out, rt = _comparison()
    rows = out.tables["monotone"].rows
    assert [r[0] for r in rows] == [1, 2, 3, 4, 5]
    inc = max(r[1] for r in rows)
    eps = rows[0][3]
    d1, d5 = rows[0][2], rows[-1][2]
    _report(capsys, 11, {f"max increase {inc:.1e} <= eps_reg {eps:.2e}": inc <= eps,
                         f"distance n=5 {d5:.2e} < n=1 {d1:.2e}": d5 < d1}, rt, 180 + 180)


def test_criterion_12_lq_example(capsys):
    out, rt = _run("lq-example", N=20000, H=0.75, T=1.0, K=0.25, dt=1 / 64, degree=1,
                   params={"beta1": 0.5, "beta2": 1.0, "beta3": 1.0, "delta": 0.25, "x0": 0.0})
    perf = out.tables["performance"].rows
    alpha0, J0, se0, oracle0 = perf[0][:4]
    checks = {f"(a) |J(0)-oracle|/SE {abs(J0 - oracle0) / se0:.2f} <= 3": alpha0 == 0 and abs(J0 - oracle0) <= 3 * se0}
    assert [r[0] for r in perf[1:]] == [0.5, 1.0, 2.0]
    for alpha, J, se, oracle, margin, cse in perf[1:]:
        checks[f"(b) J(0)-J({alpha:g}) = {margin / cse:.1f} SE > 3"] = margin > 3 * cse
    dm3 = _value(out, "max |d_m3 H| at alpha*")
    checks["(c) d_m3 H == 0"] = dm3 == 0.0
    za = _value(out, "adjoint: max |E Y(t) + m(T)| / SE on [T - delta, T]")
    zf = _value(out, "adjoint: max |E Y(t) - E Y(T)| / SE on [T - delta, T]")
    checks[f"(d) adjoint z {max(za, zf):.2f} <= 4"] = za <= 4 and zf <= 4
    dist = _value(out, "stepwise vs Picard weighted distance")
    checks[f"(e) stepwise/Picard {dist:.1e} <= 1e-3"] = dist <= 1e-3
    _report(capsys, 12, checks, rt, 300)


def test_criterion_13_determinism(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("FRACBSDE_OUTPUT_DIR", raising=False)
    t0 = time.perf_counter()
    checks = {}
    for name in ("fbm-stats", "lq-example"):
        dirs = []
        for w in (1, 3):
            cfg = config_from_mapping({"experiment": name, "seed": SEED, "N": 3000, "dt": 1 / 32,
                                       "K": 0.25 if name == "lq-example" else 0.0, "degree": 1,
                                       "workers": w, "output_dir": str(tmp_path / f"w{w}")})
            _, _, path = run_experiment(cfg)
            dirs.append(path)
        files = sorted(p.name for p in dirs[0].glob("*.csv"))
        same = files == sorted(p.name for p in dirs[1].glob("*.csv")) and all(
            (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files)
        checks[f"{name} CSVs identical for workers 1 vs 3"] = same and bool(files)
    _report(capsys, 13, checks, time.perf_counter() - t0, 120)


@pytest.fixture(scope="module", autouse=True)
def _clear_cache():
    yield
    _cache.clear()
