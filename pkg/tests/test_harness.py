import json
import os

import numpy as np
import pytest

from relopts import pipeline
from relopts.artifacts import load_artifact, save_artifact
from relopts.cli import main
from relopts.config import PipelineConfig, config_hash, parse_config_text
from relopts.errors import ArtifactError
from relopts.svgplot import DIVERGING_STOPS, colormap, heatmap_svg


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def test_artifact_roundtrip(tmp_path):
    path = str(tmp_path / "x.json")
    h = save_artifact(path, "widget", "cfg123", {"a": 1}, upstream={"up": "h0"})
    art = load_artifact(path, "widget", expect_config="cfg123")
    assert art["payload"] == {"a": 1}
    assert art["self_hash"] == h


def test_artifact_missing(tmp_path):
    with pytest.raises(ArtifactError, match="missing"):
        load_artifact(str(tmp_path / "none.json"), "widget")


def test_artifact_stale_config(tmp_path):
    path = str(tmp_path / "x.json")
    save_artifact(path, "widget", "cfgA", {})
    with pytest.raises(ArtifactError, match="stale"):
        load_artifact(path, "widget", expect_config="cfgB")


def test_artifact_kind_mismatch(tmp_path):
    path = str(tmp_path / "x.json")
    save_artifact(path, "widget", "c", {})
    with pytest.raises(ArtifactError, match="mismatch"):
        load_artifact(path, "gadget")


def test_artifact_tamper_detected(tmp_path):
    path = str(tmp_path / "x.json")
    save_artifact(path, "widget", "c", {"v": 1})
    body = json.load(open(path))
    body["payload"]["v"] = 2
    json.dump(body, open(path, "w"))
    with pytest.raises(ArtifactError, match="corrupt"):
        load_artifact(path, "widget")


# ---------------------------------------------------------------------------
# svg
# ---------------------------------------------------------------------------

def test_colormap_endpoints_and_center():
    assert colormap(0.0) == DIVERGING_STOPS[0]
    assert colormap(1.0) == DIVERGING_STOPS[-1]
    assert colormap(0.5) == DIVERGING_STOPS[4]


def test_heatmap_svg_structure():
    vals = np.arange(12, dtype=float).reshape(3, 4) - 6.0
    svg = heatmap_svg(vals, title="demo", marks=[(0, 0, "#000000")])
    assert svg.startswith("<svg")
    assert svg.count("<rect") == 12 + 1  # cells + background
    assert "<circle" in svg
    assert "demo" in svg


def test_heatmap_constant_field_uniform():
    svg = heatmap_svg(np.zeros((2, 2)))
    # all four cells at the center color
    assert svg.count(DIVERGING_STOPS[4]) == 4


# ---------------------------------------------------------------------------
# mini end-to-end pipeline (tiny budgets, structure over quality)
# ---------------------------------------------------------------------------

MINI = """
env.width = 6
env.height = 6
env.n_agents = 2
env.apples = 1,1;4,4
env.forced_coop = true
env.horizon = 40
dataset_size = 3000
metric.steps = 400
metric.batch = 96
fermat.steps = 600
fermat.hidden = 48,48
option.steps = 4000
option.state_mode = relative
downstream.steps = 3000
downstream.eval_every = 3000
downstream.eval_episodes = 4
k_eigenvectors = 2
raw_probe_nodes = 400
seeds = 0,1
conditioning = 1,2;|4,3;
"""


@pytest.fixture(scope="module")
def mini_out(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("mini"))
    cfg = parse_config_text(MINI)
    pipeline.stage_collect(cfg, 0, out)
    pipeline.stage_train_metric(cfg, 0, out)
    pipeline.stage_train_fermat(cfg, 0, out)
    pipeline.stage_discover(cfg, 0, out)
    pipeline.stage_train_options(cfg, 0, out)
    return cfg, out


def test_pipeline_artifacts_exist(mini_out):
    cfg, out = mini_out
    for name in ("dataset.fopt", "dataset.json", "metric.json", "fermat.json",
                 "basis.json", "basis_raw.json", "options.json"):
        assert os.path.exists(os.path.join(out, name)), name


def test_stage_hash_chaining(mini_out):
    cfg, out = mini_out
    ds = load_artifact(os.path.join(out, "dataset.json"), "dataset")
    metric = load_artifact(os.path.join(out, "metric.json"), "metric")
    assert metric["upstream"]["dataset"] == ds["self_hash"]
    basis = load_artifact(os.path.join(out, "basis.json"), "basis")
    assert basis["upstream"]["metric"] == metric["self_hash"]


def test_stage_refuses_stale_upstream(mini_out, tmp_path):
    cfg, out = mini_out
    other = parse_config_text(MINI + "metric.steps = 401\n")
    with pytest.raises(ArtifactError, match="stale"):
        pipeline.stage_train_fermat(other, 0, out)


def test_evaluate_and_report(mini_out):
    cfg, out = mini_out
    pipeline.stage_evaluate(cfg, 0, out, option_count=0)
    rep = load_artifact(os.path.join(out, "report_count0.json"), "report")
    assert len(rep["payload"]["per_seed_final"]) == 2
    assert os.path.exists(os.path.join(out, "curves_count0.csv"))
    lo, hi = rep["payload"]["ci95"]
    assert lo <= rep["payload"]["iqm"] <= hi


def test_plot_and_responsiveness(mini_out):
    cfg, out = mini_out
    result = pipeline.stage_plot(cfg, 0, out)
    assert result["plots"]
    for p in result["plots"]:
        assert os.path.exists(p)
        assert open(p).read().startswith("<svg")
    resp = result["responsiveness"]
    assert resp is not None
    assert len(resp["relative"]) >= 1


def test_verify_passes_then_catches_corruption(mini_out):
    cfg, out = mini_out
    assert pipeline.stage_verify(cfg, 0, out) == []
    # corrupt the dataset binary: verify must flag it
    path = os.path.join(out, "dataset.fopt")
    blob = bytearray(open(path, "rb").read())
    blob[-1] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    failures = pipeline.stage_verify(cfg, 0, out)
    assert any("dataset" in f for f in failures)
    # restore for other tests
    blob[-1] ^= 0xFF
    open(path, "wb").write(bytes(blob))


def test_option_supply_order(mini_out):
    cfg, out = mini_out
    opts = pipeline.load_options(cfg, out, count=2)
    assert [o.reward.eigen_index for o in opts] == [2, 2]
    assert [o.reward.sign for o in opts] == [1, -1]


# ---------------------------------------------------------------------------
# cli
# ---------------------------------------------------------------------------

def test_cli_discover_without_artifacts_exits_3(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text(MINI)
    rc = main(["discover", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_cli_bad_config_exits_2(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("env.width = 1\n")  # too small
    rc = main(["collect", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_collect_deterministic(tmp_path):
    import hashlib
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("env.width = 5\nenv.height = 5\nenv.n_agents = 2\n"
                        "env.apples = \nenv.forced_coop = false\ndataset_size = 500\n")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["collect", "--config", str(cfg_file), "--out", str(out), "--seed", "0"])
        assert rc == 0
        outs.append(hashlib.sha256((out / "dataset.fopt").read_bytes()).hexdigest())
    assert outs[0] == outs[1]


def test_cli_show_config():
    assert main(["show-config", "--config", "preset:default-7x7"]) == 0
