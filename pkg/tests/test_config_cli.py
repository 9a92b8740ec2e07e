import json
from importlib import resources

import numpy as np
import pytest

from tehdr.cli import cmd_analyze, cmd_calibrate, main
from tehdr.config import Config, ConfigError
from tehdr.simbench import ScenarioSpec, simulate_trial


def test_config_defaults_round_trip():
    cfg = Config()
    doc = cfg.to_dict()
    assert set(doc) == {"learners", "metalearner", "test", "ranking", "simbench"}
    assert Config.from_dict(doc) == cfg
    assert Config.from_dict(doc).hash() == cfg.hash()
    assert doc["metalearner"]["folds"] == 5 and doc["learners"]["cv_folds"] == 10
    assert doc["test"]["statistic"] == "max_type" and doc["ranking"]["top_k"] == 5


@pytest.mark.parametrize("doc", [
    {"bogus": {}},
    {"test": {"statistic": "median"}},
    {"learners": {"members": ["svm"]}},
    {"metalearner": {"unknown_key": 1}},
])
def test_config_rejects_bad_input(doc):
    with pytest.raises(ConfigError):
        Config.from_dict(doc)


@pytest.fixture(scope="module")
def dataset_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("trial")
    data, _ = simulate_trial(ScenarioSpec(2, s=1.2, beta0=0.2, beta1=1.5, n=200), seed=12)
    X = data.covariates
    lines = ["id,A,Y," + ",".join(X.names)]
    for i in range(data.n):
        cells = [data.ids[i], str(int(data.treatment[i])), repr(float(data.outcome[i]))]
        cells += [str(X.labels(j)[i]) for j in range(X.p)]
        lines.append(",".join(cells))
    (d / "trial.csv").write_text("\n".join(lines) + "\n")
    schema = {"outcome": "Y", "treatment": "A", "id": "id",
              "covariates": [{"name": nm, "kind": k} for nm, k in zip(X.names, X.kinds)]}
    (d / "schema.json").write_text(json.dumps(schema))
    cfg = {"learners": {"members": ["lasso"]}, "test": {"B": 499}, "ranking": {"ntree": 60}}
    (d / "config.json").write_text(json.dumps(cfg))
    return d


def test_analyze_outputs_and_schema(dataset_files, tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    d = dataset_files
    out = tmp_path / "out"
    code = main(["analyze", "--data", str(d / "trial.csv"), "--schema", str(d / "schema.json"),
                 "--config", str(d / "config.json"), "--out", str(out), "--seed", "4", "--workers", "1",
                 "--stat", "quad", "--top-k", "3"])
    assert code == 0
    for name in ("report.json", "cate.csv", "ranking.csv", "subgroups.csv"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    schema = json.loads(resources.files("tehdr").joinpath("schemas/analysis_report.schema.json").read_text())
    jsonschema.validate(report, schema)
    assert report["global_test"]["statistic_kind"] == "quadratic"
    assert len(report["ranking"]["top_k"]) == 3
    header = (out / "subgroups.csv").read_text().splitlines()[0]
    assert header == "covariate,bin,n,observed_effect,observed_ci_lo,observed_ci_hi,dr_adjusted_effect,overall_ate"
    assert len((out / "cate.csv").read_text().splitlines()) == 201


def test_analyze_gating_flag(dataset_files, tmp_path):
    d = dataset_files
    report = cmd_analyze(d / "trial.csv", d / "schema.json", d / "config.json", tmp_path / "o", seed=1,
                         alpha=1e-9)
    assert report["ranking"]["status"] == "no evidence against homogeneity"
    assert report["global_test"]["reject"] is False


def test_analyze_error_exit_code(dataset_files, tmp_path, capsys):
    d = dataset_files
    bad = tmp_path / "bad.csv"
    bad.write_text((d / "trial.csv").read_text().replace("\ns1,0,", "\ns1,7,").replace("\ns1,1,", "\ns1,7,"))
    code = main(["analyze", "--data", str(bad), "--schema", str(d / "schema.json"), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "row 1" in capsys.readouterr().err
    assert not (tmp_path / "x" / "report.json").exists()


def test_calibrate_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simbench": {"calib_reps": 1000, "calib_n": 5000}}))
    rec = cmd_calibrate(1, tmp_path / "cal.json", seed=3, config=cfg)
    again = cmd_calibrate(1, tmp_path / "cal2.json", seed=3, config=cfg)
    assert (tmp_path / "cal.json").read_bytes() == (tmp_path / "cal2.json").read_bytes()
    assert [r["multiplier"] for r in rec["beta0_table"]] == [0, 0.5, 1, 1.5, 2]
    b1 = rec["beta1_star"]
    np.testing.assert_allclose([r["beta1"] for r in rec["beta0_table"]], [0, 0.5 * b1, b1, 1.5 * b1, 2 * b1])
    zero = cmd_calibrate(1, tmp_path / "z.json", seed=3, target_r2=0.0, config=cfg)
    assert zero["s"] == 0.0
    assert main(["calibrate", "--scenario", "2", "--out", str(tmp_path / "m.json"), "--config", str(cfg)]) == 0


def test_benchmark_fast_smoke(tmp_path):
    cfg = tmp_path / "b.json"
    cfg.write_text(json.dumps({
        "learners": {"members": ["lasso"]}, "test": {"B": 99}, "ranking": {"ntree": 30},
        "simbench": {"scenarios": [2], "multipliers": [0, 1], "fast_replicates": 2, "fast_n": 200,
                     "calib_reps": 1000, "calib_n": 5000},
    }))
    assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "b"), "--fast", "--workers", "1"]) == 0
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert {a["method"] for a in report["aggregates"]} >= {"dr_learner", "univariate", "multivariate"}
    echo = json.loads((tmp_path / "b" / "config.json").read_text())
    assert echo["fast"] is True and echo["config"]["simbench"]["replicates"] == 2
    assert echo["config"]["metalearner"] == Config().to_dict()["metalearner"]
    rows = (tmp_path / "b" / "replicates.csv").read_text().splitlines()
    assert rows[0].startswith("scenario,multiplier,beta1,beta0,replicate,method,status")
