import csv
import json
import socket
import threading
from pathlib import Path

import pytest

from cleavekit.cli import main
from cleavekit.io import read_model


def run(*argv):
    return main([str(a) for a in argv])


def tree_bytes(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--seed", 7, "--n-embryos", 60, "--label-noise", 0.1, "--out", d) == 0
    return d


def test_simulate_is_byte_identical(sim, tmp_path):
    assert run("simulate", "--seed", 7, "--n-embryos", 60, "--label-noise", 0.1, "--out", tmp_path) == 0
    assert tree_bytes(tmp_path) == tree_bytes(sim)
    manifest = json.loads((sim / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["command"] == "simulate"
    assert set(manifest["versions"]) >= {"cleavekit", "numpy", "python"}


def test_fit_then_predict(sim, tmp_path, capsys):
    model = tmp_path / "model.json"
    assert run("fit", "--samples", sim / "samples.csv", "--out", model) == 0
    assert len(read_model(model).components) == 5
    out = tmp_path / "embryo_000.csv"
    feedback = tmp_path / "fb.json"
    rc = run("predict", "--frames", sim / "embryo_000.jsonl", "--model", model, "--gt", sim / "embryo_000.gt.json",
             "--out", out, "--feedback-out", feedback)
    assert rc == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["label"] for r in rows][:3] == ["tPNa", "tPNf", "t2"]
    assert all("error_pct" in r for r in rows)
    assert read_model(feedback).means.keys() == read_model(model).means.keys()
    # re-running is idempotent
    first = out.read_bytes()
    assert run("predict", "--frames", sim / "embryo_000.jsonl", "--model", model, "--gt", sim / "embryo_000.gt.json", "--out", out) == 0
    assert out.read_bytes() == first


def test_predict_many_and_report(sim, tmp_path):
    model = tmp_path / "runs" / "global_model.json"
    assert run("fit", "--samples", sim / "samples.csv", "--out", model) == 0
    frames = [sim / f"embryo_{i:03d}.jsonl" for i in range(3)]
    gts = [sim / f"embryo_{i:03d}.gt.json" for i in range(3)]
    assert run("predict", "--frames", *frames, "--model", model, "--gt", *gts, "--out", tmp_path / "runs") == 0
    svg = tmp_path / "dist.svg"
    assert run("report", "--dir", tmp_path / "runs", "--svg", svg) == 0
    assert svg.read_text().lstrip().startswith("<?xml") or "<svg" in svg.read_text()
    summary = list(csv.DictReader((tmp_path / "runs" / "summary.csv").open()))
    t2 = next(r for r in summary if r["label"] == "t2")
    assert t2["n_reports"] == "3" and t2["mean"]


def test_track_and_symmetry(sim, tmp_path):
    tracks = tmp_path / "tracks.json"
    assert run("track", "--frames", sim / "embryo_001.jsonl", "--out", tracks) == 0
    data = json.loads(tracks.read_text())
    assert data["tracks"]
    out = tmp_path / "sym.csv"
    assert run("symmetry", "--tracks", tracks, "--out", out, "--every", 8) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows and all(0 <= float(r["SizeS"]) <= 100 for r in rows)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_and_three_clients(tmp_path):
    for i in range(3):
        assert run("simulate", "--seed", 100 + i, "--n-embryos", 70, "--out", tmp_path / f"c{i}") == 0
    addr = f"127.0.0.1:{free_port()}"
    rcs = {}

    def server():
        rcs["server"] = run("serve", "--bind", addr, "--quorum", 3, "--out", tmp_path / "global_model.json", "--timeout", 60)

    def client(i):
        rcs[i] = run("client", "--server", addr, "--samples", tmp_path / f"c{i}" / "samples.csv",
                     "--client-id", f"clinic-{i}", "--out", tmp_path / f"c{i}" / "global_model.json")

    threads = [threading.Thread(target=server)] + [threading.Thread(target=client, args=(i,)) for i in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(90)
    assert rcs == {"server": 0, 0: 0, 1: 0, 2: 0}
    received = [(tmp_path / f"c{i}" / "global_model.json").read_bytes() for i in range(3)]
    assert received[0] == received[1] == received[2]
    assert read_model(tmp_path / "global_model.json").means == read_model(tmp_path / "c0" / "global_model.json").means


def test_exit_codes(tmp_path, capsys):
    assert run("simulate", "--bogus") == 1
    assert "usage" in capsys.readouterr().err.lower()
    assert run("frobnicate") == 1
    assert run("fit", "--samples", tmp_path / "missing.csv") == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("hours\n1.0\nabc\n")
    assert run("fit", "--samples", bad, "--out", tmp_path / "m.json") == 1
    assert run("track", "--frames", bad, "--nms", "--iou-threshold", 1.5) == 1
    samples = tmp_path / "s.csv"
    samples.write_text("hours\n" + "\n".join(str(0.1 * i) for i in range(50)) + "\n")
    dead = f"127.0.0.1:{free_port()}"
    assert run("client", "--server", dead, "--samples", samples, "--retries", 0, "--timeout", 2) in (1, 2)


def test_client_cannot_reach_server(sim, tmp_path):
    dead = f"127.0.0.1:{free_port()}"
    rc = run("client", "--server", dead, "--samples", sim / "samples.csv", "--retries", 1, "--backoff", 0.01,
             "--timeout", 2, "--out", tmp_path / "g.json")
    assert rc == 2


def test_toml_config_supplies_defaults(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[simulate]\nn_embryos = 3\nirc_rate = 1.0\n")
    out = tmp_path / "sim"
    assert run("simulate", "--config", cfg, "--seed", 1, "--out", out) == 0
    assert len(list(out.glob("*.gt.json"))) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["n_embryos"] == 3 and manifest["config"]["irc_rate"] == 1.0
    # flags override the file
    out2 = tmp_path / "sim2"
    assert run("simulate", "--config", cfg, "--n-embryos", 2, "--out", out2) == 0
    assert len(list(out2.glob("*.gt.json"))) == 2
