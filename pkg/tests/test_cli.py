import json

import numpy as np
import pytest

from cfpolicy.cli import main
from cfpolicy.datasets import FeatureSchema


@pytest.fixture
def workspace(tmp_path):
    """Supervised CSV plus schema file for a small 3-class problem."""
    rng = np.random.default_rng(0)
    n, d, k = 240, 3, 3
    feats = rng.random((n, d))
    labels = np.where(feats[:, 0] < 1.0 / 3, 1,
                      np.where(feats[:, 0] < 2.0 / 3, 2, 3))
    data = tmp_path / "data.csv"
    with open(data, "w") as fh:
        fh.write(",".join(f"f_{i}" for i in range(d)) + ",label\n")
        for row, y in zip(feats, labels):
            fh.write(",".join(f"{v:.6f}" for v in row) + f",{y}\n")
    schema = tmp_path / "schema.json"
    with open(schema, "w") as fh:
        fh.write(json.dumps(FeatureSchema.continuous(d).to_dict()))
    return {"dir": tmp_path, "data": str(data), "schema": str(schema), "k": k}


def test_full_pipeline(workspace):
    ws = workspace
    base = str(ws["dir"] / "conv")

    assert main(["convert", "--input", ws["data"], "--schema", ws["schema"],
                 "--k", "3", "--kappa", "0.4", "--seed", "7",
                 "--output", base]) == 0
    for suffix in (".csv", ".rewards.csv", ".manifest.json"):
        assert (ws["dir"] / ("conv" + suffix)).exists()

    model_path = str(ws["dir"] / "propensity.json")
    assert main(["fit-propensity", "--input", base + ".csv",
                 "--schema", ws["schema"], "--k", "3",
                 "--output", model_path]) == 0
    model = json.loads(open(model_path).read())
    assert np.asarray(model["beta"]).shape == (3, 3)

    masks_path = str(ws["dir"] / "masks.json")
    assert main(["select-features", "--input", base + ".csv",
                 "--schema", ws["schema"], "--k", "3",
                 "--propensity-model", model_path, "--cap-m", "15",
                 "--lambda1", "0.03", "--lambda2", "0.005",
                 "--output", masks_path]) == 0
    report = json.loads(open(masks_path).read())
    assert len(report["per_action"]) == 3

    policy_path = str(ws["dir"] / "policy.json")
    assert main(["train", "--train", base + ".csv", "--val", base + ".csv",
                 "--schema", ws["schema"], "--k", "3",
                 "--masks", masks_path, "--propensity-model", model_path,
                 "--cap-m", "15", "--layers", "5", "--lr", "0.01",
                 "--epochs", "10", "--lambda3", "0.001", "--seed", "1",
                 "--output", policy_path]) == 0

    eval_path = str(ws["dir"] / "eval.json")
    assert main(["evaluate", "--policy", policy_path,
                 "--test", base + ".csv", "--schema", ws["schema"],
                 "--k", "3", "--rewards", base + ".rewards.csv",
                 "--output", eval_path]) == 0
    result = json.loads(open(eval_path).read())
    assert 0.0 <= result["acc"] <= 1.0


def test_experiment_subcommand(workspace):
    ws = workspace
    config_path = str(ws["dir"] / "config.json")
    with open(config_path, "w") as fh:
        fh.write(json.dumps({
            "runs": 2, "algorithms": ["poem", "logging"],
            "noise_features": 1, "lambda1_grid": [0.03],
            "lambda2_grid": [0.0], "lambda3_grid": [0.001],
            "lr_grid": [0.01], "hidden_layers": [5], "epochs": 8,
            "sweep_epochs": 3, "patience": 3,
        }))
    out = str(ws["dir"] / "report.json")
    assert main(["experiment", "--data", ws["data"],
                 "--schema", ws["schema"], "--k", "3",
                 "--config", config_path, "--table", "--output", out]) == 0
    report = json.loads(open(out).read())
    assert set(report["summary"]) == {"poem", "logging"}


def test_experiment_toml_config(workspace):
    ws = workspace
    config_path = str(ws["dir"] / "config.toml")
    with open(config_path, "w") as fh:
        fh.write('runs = 2\nalgorithms = ["logging"]\nnoise_features = 0\n')
    out = str(ws["dir"] / "report.json")
    assert main(["experiment", "--data", ws["data"],
                 "--schema", ws["schema"], "--k", "3",
                 "--config", config_path, "--output", out]) == 0
    assert "logging" in json.loads(open(out).read())["summary"]


def test_unknown_subcommand_exits_nonzero(workspace):
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_missing_required_flag(workspace):
    with pytest.raises(SystemExit):
        main(["convert", "--input", workspace["data"]])
