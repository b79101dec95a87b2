import csv
import json

import numpy as np
import pytest

from jmacate.cli import main
from jmacate.dgp import SimConfig, generate_example1, generate_nswd_like
from jmacate.errors import ConfigInvalid
from jmacate.fileio import candidates_to_json, read_dataset, write_dataset
from jmacate.harness import METHODS, StudyConfig, guided_noise_scale, run_guided, run_study, weights_consistency
from jmacate.jma import Dataset, fit_jma, spec

SMALL = {"example": 1, "n": [200], "r2": [0.9], "rho": [0.0], "design": [1], "reps": 2, "n_eval": 500, "seed": 11}
SCHEMA = ["method", "n", "r2", "rho", "design", "rep", "ase", "normalizer", "normalized_risk"]


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_simulate_writes_stable_schema_and_is_deterministic(tmp_path, config_file, capsys):
    assert main(["simulate", "--config", str(config_file), "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["--out-dir", str(tmp_path / "b"), "simulate", "--config", str(config_file)]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    rows = _read(tmp_path / "a" / "results.csv")
    assert list(rows[0]) == SCHEMA
    assert {r["method"] for r in rows} >= set(METHODS)
    for r in rows:
        assert float(r["normalized_risk"]) >= 1 - 1e-6
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["config"]["seed"] == 11
    assert len(manifest["replication_seeds"]) == 2
    for name in ("summary.csv", "weights.csv", "replications.csv"):
        assert (tmp_path / "a" / name).exists()
    assert "JMA" in capsys.readouterr().out


def test_rerun_from_manifest_reproduces(tmp_path, config_file):
    main(["simulate", "--config", str(config_file), "--out-dir", str(tmp_path / "a")])
    main(["simulate", "--config", str(tmp_path / "a" / "manifest.json"), "--out-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert (tmp_path / "a" / "weights.csv").read_bytes() == (tmp_path / "b" / "weights.csv").read_bytes()


def test_threads_do_not_change_results():
    cfg = StudyConfig.from_mapping({**SMALL, "reps": 4})
    one, four = run_study(cfg, threads=1), run_study(cfg, threads=4)
    assert one.rows() == four.rows()


def test_toml_config_and_seed_override(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text('example = 1\nn = [200]\nr2 = 0.9\nreps = 1\nn_eval = 100\nseed = 3\n')
    assert main(["simulate", "--config", str(p), "--seed", "9", "--out-dir", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["seed"] == 9


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({**SMALL, "nope": 1}))
    assert main(["simulate", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    assert "nope" in capsys.readouterr().err
    p.write_text(json.dumps({**SMALL, "r2": [1.5]}))
    assert main(["simulate", "--config", str(p), "--out-dir", str(tmp_path)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(ConfigInvalid):
        StudyConfig.from_mapping({"n": [10]})


def test_null_signal_run():
    table = run_study(StudyConfig.from_mapping({**SMALL, "c": 0.0, "reps": 10, "n_eval": 1000, "r2": [0.5]}))
    means = np.array([table.mean_risk(m, normalized=False) for m in METHODS])
    oracle = np.mean([r.normalizer for r in table.replications])
    assert np.all(means >= oracle)
    assert means.max() <= 2 * means.min()


def test_w_delta_single_correct_candidate():
    cands = candidates_to_json([spec(0, 0, 1, (0, 0), (1, 1))])
    cfg = StudyConfig.from_mapping({**SMALL, "example": 2, "candidates": cands, "n": [200, 400], "reps": 2})
    table, curve = weights_consistency(cfg)
    assert all(r.w_delta == 1.0 for r in table.replications)
    assert curve == {200: 1.0, 400: 1.0}


def test_weights_consistency_cli(tmp_path, capsys):
    p = tmp_path / "wc.json"
    p.write_text(json.dumps({"n": [200, 400], "reps": 2, "n_eval": 200, "r2": 0.5}))
    assert main(["weights-consistency", "--config", str(p), "--out-dir", str(tmp_path / "o"), "--seed", "1"]) == 0
    rows = _read(tmp_path / "o" / "consistency.csv")
    assert [int(r["n"]) for r in rows] == [200, 400]
    assert all(0.0 <= float(r["mean_w_delta"]) <= 1.0 for r in rows)
    for r in _read(tmp_path / "o" / "replications.csv"):
        assert 0.0 <= float(r["w_delta"]) <= 1.0


@pytest.fixture
def nswd_files(tmp_path):
    data, _ = generate_nswd_like(np.random.default_rng(0))
    csv_path = tmp_path / "nswd.csv"
    write_dataset(csv_path, data)
    specs = [spec(0, 0, 1), spec(1, 0, 1, 2), spec(2, 0, 1, 2, (0, 0), (0, 2)), spec(3, 2, 3)]
    cand_path = tmp_path / "cands.json"
    cand_path.write_text(json.dumps(candidates_to_json(specs)))
    return data, specs, csv_path, cand_path


def test_csv_round_trip(nswd_files):
    data, _, csv_path, _ = nswd_files
    back = read_dataset(csv_path)
    assert np.array_equal(back.X, data.X) and np.array_equal(back.T, data.T) and np.array_equal(back.y, data.y)


def test_guided_noiseless_nested_candidates(nswd_files):
    data, specs, _, _ = nswd_files
    nested = [specs[1], spec(1, 0, 1, 2, (0, 0)), spec(2, 0, 1, 2, 3)]
    table = run_guided(data, nested, 0, reps=3, seed=0, sigma2=0.0)
    for r in table.replications:
        for m in METHODS:
            assert r.ase[m] < 1e-8


def test_guided_noise_multiplier_moment():
    u = guided_noise_scale(np.random.default_rng(0), 2_000_000)
    assert np.mean(u**2) == pytest.approx(13 / 12, rel=2e-3)
    assert u.min() >= 0.5 and u.max() <= 1.5


def test_guided_cli_deterministic(tmp_path, nswd_files):
    _, _, csv_path, cand_path = nswd_files
    args = ["guided", str(csv_path), "--candidates", str(cand_path), "--true-model", "3", "--reps", "3", "--seed", "4"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["sigma2_t"] == m["sigma2_c"] > 0


def test_guided_per_arm_variance(nswd_files):
    data, specs, _, _ = nswd_files
    table = run_guided(data, specs, 2, reps=1, seed=0, per_arm=True)
    assert table.extra["sigma2_t"] != table.extra["sigma2_c"]


def test_estimate_matches_library(tmp_path):
    cfg = SimConfig(n=300, r2=0.6, design=2, n_eval=1).resolved(n_mc=100_000)
    data = generate_example1(cfg, np.random.default_rng(8)).dataset
    write_dataset(tmp_path / "d.csv", data)
    specs = [spec(0, 0), spec(1, 0, 1, (1, 1)), spec(2, 2, 3)]
    (tmp_path / "c.json").write_text(json.dumps(candidates_to_json(specs)))
    assert main(["estimate", str(tmp_path / "d.csv"), "--candidates", str(tmp_path / "c.json"),
                 "--seed", "21", "--out-dir", str(tmp_path / "o")]) == 0
    jf = fit_jma(read_dataset(tmp_path / "d.csv"), specs, np.random.default_rng(21))
    report = json.loads((tmp_path / "o" / "estimate.json").read_text())
    assert report["weights"] == jf.weights.w.tolist()
    assert report["M"] == jf.pairs.M and report["cv"] == jf.cv
    est = np.array([float(r["delta_hat"]) for r in _read(tmp_path / "o" / "estimates.csv")])
    assert np.array_equal(est, jf.predict(data.X).values)


def test_estimate_identical_arms(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 2))
    y = 1 + X[:, 0] - X[:, 1] + rng.normal(size=100)
    data = Dataset(np.vstack([X, X]), np.repeat([True, False], 100), np.concatenate([y, y]))
    write_dataset(tmp_path / "d.csv", data)
    (tmp_path / "c.json").write_text(json.dumps([[{"var": 1}], [{"var": 1}, {"var": 2}]]))
    assert main(["estimate", str(tmp_path / "d.csv"), "--candidates", str(tmp_path / "c.json"),
                 "--out-dir", str(tmp_path / "o")]) == 0
    est = np.array([float(r["delta_hat"]) for r in _read(tmp_path / "o" / "estimates.csv")])
    assert np.max(np.abs(est)) < 1e-10


def test_estimate_missing_column_exit_2(tmp_path, nswd_files, capsys):
    _, _, csv_path, cand_path = nswd_files
    text = csv_path.read_text().splitlines()
    text[0] = text[0].replace(",t,", ",treat,")
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(text))
    assert main(["estimate", str(bad), "--candidates", str(cand_path), "--out-dir", str(tmp_path)]) == 2
    assert "'t'" in capsys.readouterr().err


def test_estimate_rank_deficient_exit_3(tmp_path, nswd_files, capsys):
    _, _, csv_path, _ = nswd_files
    # covariate 4 is binary, so its square duplicates it
    (tmp_path / "c.json").write_text(json.dumps([[{"var": 4}, {"var": 4, "pow": 2}]]))
    assert main(["estimate", str(csv_path), "--candidates", str(tmp_path / "c.json"),
                 "--out-dir", str(tmp_path)]) == 3
    assert "candidate 0" in capsys.readouterr().err


def test_bad_candidates_file(tmp_path, nswd_files):
    _, _, csv_path, _ = nswd_files
    (tmp_path / "c.json").write_text(json.dumps([[{"var": 0}]]))
    assert main(["estimate", str(csv_path), "--candidates", str(tmp_path / "c.json"),
                 "--out-dir", str(tmp_path)]) == 2


def test_synth_command(tmp_path):
    assert main(["synth", str(tmp_path / "x.csv"), "--kind", "nswd", "--seed", "2"]) == 0
    assert read_dataset(tmp_path / "x.csv").n == 722
