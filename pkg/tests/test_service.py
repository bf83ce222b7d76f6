"""HTTP surface: every endpoint over an in-process client."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from lgdn.service.app import create_app

CORPUS_CFG = {"n_train": 8, "n_val": 2, "n_test": 6, "n_concepts": 4,
              "frames_per_video": 4, "tokens_per_frame": 2,
              "tokens_per_text": 2, "token_dim": 8, "seed": 21}
TRAIN_CFG = {"n_frames": 4, "n_salient": 2, "batch_size": 4, "epochs": 2,
             "warmup_epochs": 1, "enc_depth": 1, "d_joint": 4, "d_fuse": 8,
             "fusion_depth": 1, "bank_size": 16, "seed": 3}


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("svc")


@pytest.fixture(scope="module")
def corpus_path(client, workdir):
    path = str(workdir / "corpus.json")
    resp = client.post("/corpus", json={"out_path": path, "config": CORPUS_CFG})
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["version"] == "lgdn-corpus/1"
    assert body["splits"] == {"train": 8, "val": 2, "test": 6}
    return path


@pytest.fixture(scope="module")
def checkpoint_path(client, workdir, corpus_path):
    ck = str(workdir / "ck.json")
    log = str(workdir / "train.csv")
    resp = client.post("/train", json={
        "corpus_path": corpus_path, "checkpoint_out": ck,
        "log_out": log, "config": TRAIN_CFG})
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["steps"] == 4  # 8 pairs / batch 4 * 2 epochs
    assert (workdir / "train.csv").exists()
    return ck


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_eval_all_modes(client, workdir, corpus_path, checkpoint_path):
    for mode in ("global", "local", "ensemble"):
        report = str(workdir / f"report_{mode}.json")
        resp = client.post("/eval", json={
            "checkpoint": checkpoint_path, "corpus_path": corpus_path,
            "mode": mode, "split": "test", "report_out": report})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["mode"] == mode
        assert 0 <= body["t2v"]["r1"] <= body["t2v"]["r5"] <= body["t2v"]["r10"] <= 100
        assert body["r_sum"] == pytest.approx(
            body["t2v"]["r1"] + body["t2v"]["r5"] + body["t2v"]["r10"]
            + body["v2t"]["r1"] + body["v2t"]["r5"] + body["v2t"]["r10"])
        saved = json.loads((workdir / f"report_{mode}.json").read_text())
        assert saved["mode"] == mode
        assert saved["r_sum"] == body["r_sum"]


def test_eval_missing_checkpoint_is_404(client, corpus_path):
    resp = client.post("/eval", json={
        "checkpoint": "/nonexistent/ck.json", "corpus_path": corpus_path})
    assert resp.status_code == 404
    assert "MissingCheckpoint" in resp.json()["detail"]


def test_eval_bad_mode_rejected(client, corpus_path, checkpoint_path):
    resp = client.post("/eval", json={
        "checkpoint": checkpoint_path, "corpus_path": corpus_path,
        "mode": "sideways"})
    assert resp.status_code == 400


def test_sweep_rows_and_csv(client, workdir, corpus_path, checkpoint_path):
    csv_path = str(workdir / "sweep.csv")
    resp = client.post("/sweep", json={
        "checkpoint": checkpoint_path, "corpus_path": corpus_path,
        "salient": [1, 2, 4], "csv_out": csv_path})
    assert resp.status_code == 200, resp.text
    rows = resp.json()["rows"]
    assert [r["n_salient"] for r in rows] == [1, 2, 4]
    ref = [r for r in rows if r["n_salient"] == 4][0]
    assert ref["speedup"] == pytest.approx(1.0)
    lines = (workdir / "sweep.csv").read_text().strip().split("\n")
    assert lines[0] == ("n_salient,r_sum,r1_t2v,r5_t2v,r10_t2v,"
                       "r1_v2t,r5_v2t,r10_v2t,wall_ms,speedup")
    assert len(lines) == 4


def test_gradcheck_endpoint(client):
    # shrunken suite: this verifies the endpoint wiring; the full-size sweep
    # runs in the acceptance tests
    resp = client.post("/gradcheck", json={
        "eps": 1e-5, "tolerance": 1e-4,
        "config": {"batch_size": 2, "n_frames": 2, "n_salient": 1}})
    assert resp.status_code == 200
    body = resp.json()
    assert set(body["errors"]) == {"l_mvcl", "l_mfcl", "l_lsfm", "l_total"}
    assert body["ok"] is True
    assert body["max_error"] < 1e-4


def test_ablate_endpoint(client, corpus_path):
    cfg = dict(TRAIN_CFG, epochs=2)
    resp = client.post("/ablate", json={
        "corpus_path": corpus_path, "strategies": ["collab", "random"],
        "config": cfg})
    assert resp.status_code == 200, resp.text
    rows = resp.json()["rows"]
    assert [r["strategy"] for r in rows] == ["collab", "random"]
    assert rows[0]["selection_recall"] is not None
    assert rows[1]["selection_recall"] is None


def test_ablate_unknown_strategy_rejected(client, corpus_path):
    resp = client.post("/ablate", json={
        "corpus_path": corpus_path, "strategies": ["sideways"]})
    assert resp.status_code == 400


def test_corpus_invalid_config_rejected(client, workdir):
    resp = client.post("/corpus", json={
        "out_path": str(workdir / "x.json"),
        "config": {"n_concepts": 1}})
    assert resp.status_code == 400
    assert "InvalidConfig" in resp.json()["detail"]


def test_unknown_body_fields_rejected(client):
    resp = client.post("/gradcheck", json={"epsilon": 1e-5})
    assert resp.status_code == 422
