import csv
import json
import os

import numpy as np
import pytest

from sepmix.experiments import (
    ExperimentConfig,
    run_cutoff_profile,
    run_verify,
    write_csv_atomic,
)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(n_ladder=[16, 8])
    with pytest.raises(ValueError):
        ExperimentConfig(eps=[1.5])
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"n_ladder": [8, 12], "eps": [0.25]}))
    cfg = ExperimentConfig.from_json(str(cfg_path), {"seed": 3})
    assert cfg.n_ladder == [8, 12] and cfg.seed == 3
    with pytest.raises(ValueError):
        ExperimentConfig.from_json(str(cfg_path), {"bogus": 1})


def test_k_rules():
    cfg = ExperimentConfig(k_rule={"rule": "half"})
    assert cfg.k_for(10) == 5
    cfg = ExperimentConfig(k_rule={"rule": "power", "rho": 0.5, "c_rho": 1.0})
    assert cfg.k_for(100) == 10
    cfg = ExperimentConfig(k_rule={"rule": "fixed", "k": 3})
    assert cfg.k_for(100) == 3


def test_atomic_write_replaces_not_corrupts(tmp_path):
    path = tmp_path / "rows.csv"
    write_csv_atomic(str(path), ["a"], [[1]])
    before = path.read_text()

    def boom():
        yield [2]
        raise RuntimeError("mid-write failure")

    with pytest.raises(RuntimeError):
        write_csv_atomic(str(path), ["a"], boom())
    assert path.read_text() == before
    assert not [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]


def test_mini_cutoff_run(tmp_path):
    cfg = ExperimentConfig(
        n_ladder=[8, 12],
        eps=[0.25],
        wilson_replicas=600,
        coalescence_replicas=300,
        seed=5,
        outdir=str(tmp_path / "run"),
        delta=0.25,
    )
    report = run_cutoff_profile(cfg)
    assert len(report.rows) == 2
    with open(os.path.join(report.outdir, "cutoff.csv")) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "N"
    for row in report.rows:
        n, k, eps, lower, upper, pred_gap, pred_uni, exact, ratio = row[:9]
        assert 0 < lower <= upper
        assert lower <= exact <= upper  # bracket property against the exact engine
    manifest = json.load(open(os.path.join(report.outdir, "manifest.json")))
    assert manifest["seed"] == 5


def test_cutoff_run_reproducible(tmp_path):
    outs = []
    for d in ("a", "b"):
        cfg = ExperimentConfig(
            n_ladder=[8], eps=[0.25], wilson_replicas=300,
            coalescence_replicas=150, seed=9, outdir=str(tmp_path / d),
        )
        run_cutoff_profile(cfg)
        outs.append(open(tmp_path / d / "cutoff.csv").read())
    assert outs[0] == outs[1]


def test_run_verify_fast_passes():
    results = run_verify("fast", seed=1)
    failed = [r for r in results if not r.passed]
    assert not failed, failed
    assert all(r.property for r in results)


def test_run_verify_rejects_unknown_suite():
    with pytest.raises(ValueError):
        run_verify("medium")
