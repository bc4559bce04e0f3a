import json
import subprocess

import numpy as np
import pytest

import ropar

DEMO_INI = """
[run]
seed = 3
[synth]
size = 24
length_min = 65
length_max = 65
[vae]
downsample = 4
epochs = 3
[gen]
max_frames = 16
window = 16
epochs = 2
batch_size = 8
[eval]
corpus_size = 200
epochs = 2
test_size = 40
rounds = 2
"""


def test_version_info():
    info = ropar.version_info()
    assert info["artifact_format"] == 1
    assert info["libtorch"]


def test_config_roundtrip_and_errors():
    cfg = ropar.parse_config("[run]\nseed = 5\n[synth]\nlength_min = 65\nlength_max = 65\n")
    assert cfg["run"]["seed"] == "5"
    assert ropar.config_hash("[run]\nseed=5\n[synth]\nlength_min=65\nlength_max=65\n", ["run.root=x"]) == \
        ropar.config_hash("[run]\nseed=5\n[synth]\nlength_min=65\nlength_max=65\n")
    with pytest.raises(ropar.RoparError, match="vae.nope"):
        ropar.parse_config("[vae]\nnope = 1\n")


def test_mask_plan_keeps_noisy_cells_masked():
    credible = np.ones((16, 5), dtype=bool)
    credible[:, 3] = False
    masked, loss = ropar.mask_plan(credible, 0.7, seed=4)
    assert masked.shape == (16, 5)
    assert masked[:, 3].all()
    assert not loss[:, 3].any()
    assert not (loss & ~masked).any()


def test_metrics():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(400, 4))
    assert ropar.fid(a, a) < 1e-6
    assert abs(ropar.fid(a, a + 1.0) - 4.0) < 1e-6
    p = rng.normal(size=(10, 22, 3))
    q = p + np.array([0.0, 0.3, 0.4])
    assert ropar.mpjpe(p, q) == pytest.approx(0.5)
    assert ropar.mm_distance(a, a) == 0.0
    r = ropar.r_precision(a[:64], a[:64], seed=1)
    assert r["r1"] == 1.0 and r["batches"] == 2


def test_corpus_stats_hits_target():
    stats = ropar.corpus_stats(size=300, full_body_fraction=0.24, seed=2)
    assert abs(stats["full_body_fraction"] - 0.24) <= 0.02


def test_pipeline_stages(tmp_path):
    ini = tmp_path / "tiny.ini"
    ini.write_text(DEMO_INI)
    root = ["run.root=" + str(tmp_path / "run")]
    for stage in ["synth", "curate", "train-vae", "train-gen", "evaluate"]:
        out = ropar.run_stage(stage, ini, root)
        assert out["path"]
    report = json.loads((tmp_path / "run" / "reports" / "metrics.v1.json").read_text())
    assert report["fid"] >= 0.0 and 0.0 <= report["r1"] <= 1.0
    prov = json.loads((tmp_path / "run" / "reports" / "metrics.v1.json.provenance.json").read_text())
    assert prov["stage"] == "evaluate" and prov["config_hash"]
    s = ropar.sample(ini, "a person waves the left arm while running forward", frames=64, seed=1, overrides=root)
    assert s["frames"] == 64 and s["checks"]
    free = ropar.sample(ini, "someone dances", frames=32, seed=1, overrides=root)
    assert free["checks"] is None
    with pytest.raises(ropar.RoparError, match="data"):
        ropar.run_stage("train-gen", ini, ["run.root=" + str(tmp_path / "empty")])
