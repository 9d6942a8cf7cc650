import csv
import json
import os

import numpy as np
import pytest

from sepmix.cli import EXIT_CAPACITY, EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_spectrum_outputs(tmp_path):
    out = tmp_path / "spec"
    rc = main(["spectrum", "--n", "32", "--count", "2", "--out", str(out)])
    assert rc == EXIT_OK
    rows = _read_csv(out / "eigenvalues.csv")
    assert rows[0] == ["index", "eigenvalue", "N2_scaled"]
    assert len(rows) == 3
    shape = _read_csv(out / "eigenfunction_1.csv")
    assert shape[0] == ["x", "g", "reference_shape"]
    assert len(shape) == 33
    assert json.load(open(out / "manifest.json"))["config_sha256"]


def test_spectrum_interior_shooting(tmp_path):
    out = tmp_path / "spec2"
    rc = main(["spectrum", "--n", "16", "--count", "2", "--operator", "interior",
               "--method", "shooting", "--out", str(out)])
    assert rc == EXIT_OK
    rows = _read_csv(out / "eigenvalues.csv")
    assert float(rows[1][1]) == pytest.approx(2 * (1 - np.cos(np.pi / 16)), rel=1e-9)


def test_simulate_with_event_log(tmp_path):
    out = tmp_path / "sim"
    log = tmp_path / "events.csv"
    rc = main(["simulate", "--n", "8", "--k", "4", "--horizon", "1.5",
               "--event-log", str(log), "--out", str(out), "--seed", "5"])
    assert rc == EXIT_OK
    rows = _read_csv(log)
    assert rows[0] == ["t", "x", "dir", "applied", "member_states_hash"]
    times = [float(r[0]) for r in rows[1:]]
    assert times == sorted(times)
    finals = _read_csv(out / "final_states.csv")
    assert finals[0] == (["replica", "member", "configuration"]
                         + [f"h{x}" for x in range(9)])
    # height columns carry the integer-scaled path of the written configuration
    for row in finals[1:]:
        occ = [int(c) for c in row[2]]
        psum = np.cumsum([0] + occ)
        expect = 8 * psum - 4 * np.arange(9)
        assert [int(v) for v in row[3:]] == expect.tolist()


def test_coalesce_csv(tmp_path):
    out = tmp_path / "coal"
    rc = main(["coalesce", "--n", "6", "--k", "3", "--replicas", "50",
               "--out", str(out), "--seed", "2"])
    assert rc == EXIT_OK
    rows = _read_csv(out / "coalescence.csv")
    assert rows[0] == ["replica", "T", "T1", "T2", "events", "censored"]
    assert len(rows) == 51


def test_mix_exact_csv(tmp_path, capsys):
    out = tmp_path / "mix"
    rc = main(["mix-exact", "--n", "6", "--k", "3", "--eps", "0.25",
               "--points", "20", "--out", str(out)])
    assert rc == EXIT_OK
    rows = _read_csv(out / "tv_curve.csv")
    assert rows[0] == ["t", "d", "lower_sandwich", "upper_sandwich"]
    d = np.array([float(r[1]) for r in rows[1:]])
    lo = np.array([float(r[2]) for r in rows[1:]])
    hi = np.array([float(r[3]) for r in rows[1:]])
    assert np.all(d <= hi + 1e-12) and np.all(d >= lo - 1e-12)
    assert "t_mix(0.25)" in capsys.readouterr().out


def test_estimate_covariance(tmp_path):
    out = tmp_path / "est"
    rc = main(["estimate", "--what", "covariance", "--n", "12", "--k", "2",
               "--mode", "exact-enum", "--out", str(out)])
    assert rc == EXIT_OK
    rows = _read_csv(out / "estimate_covariance.csv")
    assert rows[0] == ["quantity", "value", "stderr", "replicas", "seed"]


def test_estimate_wilson(tmp_path):
    out = tmp_path / "estw"
    rc = main(["estimate", "--what", "wilson", "--n", "8", "--k", "4",
               "--replicas", "300", "--out", str(out), "--seed", "3"])
    assert rc == EXIT_OK
    assert os.path.exists(out / "estimate_wilson.csv")


def test_capacity_exit_code(tmp_path):
    rc = main(["mix-exact", "--n", "30", "--k", "15", "--out", str(tmp_path / "x")])
    assert rc == EXIT_CAPACITY


def test_config_error_exit_code(tmp_path):
    rc = main(["spectrum", "--n", "1", "--out", str(tmp_path / "y")])
    assert rc == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    rc = main(["cutoff", "--config", str(bad)])
    assert rc == EXIT_CONFIG
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"unknown_key": 1}))
    assert main(["cutoff", "--config", str(good)]) == EXIT_CONFIG


def test_verify_failure_exit_code(monkeypatch, capsys):
    from sepmix import cli as cli_mod
    from sepmix.experiments import CheckResult

    def fake_verify(suite, seed):
        return [CheckResult("doomed", "a property that fails", False, "boom", 0.0)]

    monkeypatch.setattr(cli_mod, "run_verify", fake_verify)
    rc = main(["verify", "--suite", "fast"])
    assert rc == EXIT_INVARIANT
    assert "doomed" in capsys.readouterr().err
