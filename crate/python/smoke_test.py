"""Smoke test for the `wsod` extension module.

Build it first with `maturin develop --release -m crates/py/Cargo.toml`.
"""

import json

import pytest

import wsod

SMALL = {
    "data.n_train": "12",
    "data.n_test": "6",
    "train.iterations": "20",
    "train.lr_drop_at": "15",
}


def test_geometry():
    assert wsod.iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert wsod.iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0
    boxes = [(0, 0, 10, 10), (1, 1, 10, 10), (50, 50, 60, 60)]
    assert wsod.nms(boxes, [0.9, 0.8, 0.7], 0.5) == [0, 2]
    with pytest.raises(ValueError):
        wsod.iou((10, 0, 0, 10), (0, 0, 1, 1))


def test_scc_scales_absent_columns():
    scores = [[0.5, 0.4, 0.1], [0.2, 0.6, 0.2]]
    midn = [[0.9, 0.0], [0.5, 0.0]]
    out = wsod.scc(scores, midn)
    assert out[0][0] == 0.5
    assert out[0][1] == pytest.approx(0.004)
    assert out[1][2] == 0.2
    assert wsod.scc(scores, midn, lam=1.0) == scores


def test_config():
    assert "alpha = 0.9" in wsod.default_config()
    assert wsod.config_digest() == wsod.config_digest({})
    assert wsod.config_digest({"train.lr": "0.01"}) != wsod.config_digest()
    with pytest.raises(ValueError, match="train.nope"):
        wsod.config_digest({"train.nope": "1"})


def test_run_is_deterministic():
    metrics, dets, ckpt = wsod.run(SMALL, seed=3)
    doc = json.loads(metrics)
    assert set(doc) == {"config_digest", "per_class_ap", "map", "corloc", "ilc_accuracy"}
    assert 0.0 <= doc["map"] <= 1.0
    assert ckpt[:8] == b"WSODCKPT"
    assert wsod.run(SMALL, seed=3) == (metrics, dets, ckpt)


def test_check_suites_pass():
    for name, cases, failures, _ in wsod.check(1):
        assert cases > 0 and failures == 0, name
