import csv
from pathlib import Path
import json

import pytest
import yaml

from fracbsde.cli import config_from_mapping, load_config, main
from fracbsde.errors import ConfigError
from fracbsde.experiments import EXPERIMENTS


def _write(tmp_path, mapping, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(mapping))
    return p


def test_minimal_config_fills_defaults():
    cfg = config_from_mapping({"experiment": "ito-check"})
    assert (cfg.H, cfg.T, cfg.K, cfg.dt, cfg.N, cfg.degree) == (0.75, 1.0, 0.0, 1 / 64, 20000, 2)
    assert (cfg.picard_max, cfg.tol, cfg.seed, cfg.workers) == (50, 1e-6, 20240101, 1)
    assert cfg.params == {"steps": [32, 64, 128]}


def test_dt_default_follows_T():
    assert config_from_mapping({"experiment": "ito-check", "T": 2.0}).dt == 2.0 / 64


@pytest.mark.parametrize("H", [0.5, 1.0, 0.3])
def test_hurst_range(H):
    with pytest.raises(ConfigError, match=r"H must lie in \(1/2, 1\)"):
        config_from_mapping({"experiment": "ito-check", "H": H})


@pytest.mark.parametrize("raw", [
    {"experiment": "ito-check", "bogus": 1},
    {"experiment": "ito-check", "picard": {"maxx": 3}},
    {"experiment": "ito-check", "params": {"nope": 1}},
    {"experiment": "nope"},
    {"experiment": "ito-check", "N": "many"},
    {"experiment": "solver-benchmarks", "params": {"delta": 0.3}},
    [1, 2],
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_mapping(raw)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yaml")


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("experiment: ito-check\nH: [0.7\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == 0
    assert capsys.readouterr().out.split() == list(EXPERIMENTS)


def test_validate_prints_effective_config(tmp_path, capsys):
    p = _write(tmp_path, {"experiment": "contraction", "H": 0.7})
    assert main(["validate", str(p)]) == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown["H"] == 0.7 and shown["picard"] == {"max": 50, "tol": 1e-6}
    assert shown["params"] == {"delta": 0.25}


def test_errors_exit_two(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "absent.yaml")]) == 2
    p = _write(tmp_path, {"experiment": "ito-check", "H": 0.5})
    assert main(["run", str(p)]) == 2
    assert "H must lie in (1/2, 1)" in capsys.readouterr().err
    good = _write(tmp_path, {"experiment": "kernel-identities"}, "good.yaml")
    assert main(["run", str(good), "--workers", "0"]) == 2


def _run(tmp_path, sub, mapping, *extra):
    out = tmp_path / sub
    p = _write(tmp_path, {**mapping, "output_dir": str(out)}, f"{sub}.yaml")
    return main(["run", str(p), *extra]), out / mapping["experiment"]


def test_run_is_reproducible_across_workers(tmp_path, monkeypatch):
    monkeypatch.delenv("FRACBSDE_OUTPUT_DIR", raising=False)
    cfg = {"experiment": "kernel-identities"}
    s1, d1 = _run(tmp_path, "a", cfg)
    s2, d2 = _run(tmp_path, "b", cfg, "--workers", "3")
    assert s1 == s2 == 0
    names = sorted(p.name for p in d1.iterdir())
    assert names == sorted(p.name for p in d2.iterdir())
    assert {"inner_products.csv", "criteria.csv", "manifest.json", "summary.txt"} <= set(names)
    for name in names:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name
    manifest = json.loads((d1 / "manifest.json").read_text())
    assert manifest["passed"] is True and manifest["seed"] == 20240101
    assert "workers" not in manifest["config"]


def test_output_env_override(tmp_path, monkeypatch):
    target = tmp_path / "env"
    monkeypatch.setenv("FRACBSDE_OUTPUT_DIR", str(target))
    status, _ = _run(tmp_path, "ignored", {"experiment": "kernel-identities"})
    assert status == 0
    assert (target / "kernel-identities" / "manifest.json").is_file()
    assert not (tmp_path / "ignored").exists()


def test_lq_performance_table(tmp_path, monkeypatch):
    monkeypatch.delenv("FRACBSDE_OUTPUT_DIR", raising=False)
    status, d = _run(tmp_path, "lq", {"experiment": "lq-example", "N": 2000, "dt": 1 / 32, "degree": 1})
    assert status in (0, 1)
    rows = list(csv.DictReader(open(d / "performance.csv")))
    assert [float(r["alpha"]) for r in rows] == [0.0, 0.5, 1.0, 2.0]
    assert all(float(r["J"]) < 0 for r in rows)
    crit = list(csv.DictReader(open(d / "criteria.csv")))
    assert crit and set(crit[0]) == {"criterion", "value", "relation", "threshold", "margin", "passed"}


CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.yaml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert load_config(path).experiment == path.stem
