import csv
import json
import struct
from pathlib import Path

import numpy as np
import pytest

from eaprune.cli import main
from eaprune.errors import ConfigError, FormatError
from eaprune.harness.config import RunConfig, load_config
from eaprune.harness.data import load_dataset, load_idx_images, make_splits, parse_idx, synthetic
from eaprune.harness.evaluate import predict, proxy_evaluate
from eaprune.harness.experiments import prepare
from eaprune.netgraph import builtin, count_flops, init_weights, save_weights
from eaprune.prunespace import build_space
from eaprune.rng import rng_stream


def idx_bytes(arr, code=0x08):
    head = b"\x00\x00" + bytes([code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.astype(">u1").tobytes()


# ---------------------------------------------------------------- data

def test_idx_parse_and_scaling(tmp_path):
    arr = (np.arange(10 * 28 * 28) % 256).astype(np.uint8).reshape(10, 28, 28)
    p = tmp_path / "img.idx"
    p.write_bytes(idx_bytes(arr))
    out = load_idx_images(p)
    assert out.shape == (10, 1, 28, 28) and out.dtype == np.float32
    np.testing.assert_array_equal(out[:, 0], arr / np.float32(255))


@pytest.mark.parametrize("mutate, offset", [
    (lambda b: b"\x01" + b[1:], 0),                      # bad magic
    (lambda b: b[:2] + b"\x07" + b[3:], 2),              # unknown element type
    (lambda b: b[:6], 6),                                # header cut inside the dimensions
    (lambda b: b[:-5], 2 * 3 * 4 + 16 - 5),              # short payload
    (lambda b: b + b"\x00\x00", 2 * 3 * 4 + 16),         # trailing bytes
])
def test_idx_corruptions_report_offsets(mutate, offset):
    good = idx_bytes(np.zeros((2, 3, 4), np.uint8))
    assert parse_idx(good).shape == (2, 3, 4)
    with pytest.raises(FormatError) as exc:
        parse_idx(mutate(good))
    assert exc.value.offset == offset
    assert f"offset {offset}" in str(exc.value)


def test_csv_dataset(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1,2,3,4\n1,5,6,7,8\n")
    d = load_dataset(p, "csv", shape=(1, 2, 2))
    assert d.images.shape == (2, 1, 2, 2) and d.labels.tolist() == [0, 1] and d.class_count == 2
    p.write_text("0,1,x\n")
    with pytest.raises(FormatError):
        load_dataset(p, "csv")


def test_synthetic_reproducible_and_balanced():
    a, b = synthetic(4, (3, 8, 8), 200, seed=3), synthetic(4, (3, 8, 8), 200, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    assert np.bincount(a.labels).tolist() == [50] * 4
    assert not np.array_equal(a.images, synthetic(4, (3, 8, 8), 200, seed=4).images)


def test_splits_are_disjoint_and_checked():
    d = synthetic(4, (2,), 100, seed=0)
    s = make_splits(d, 30, 40, seed=1, pretrain=20)
    sets = [set(s.indices[k]) for k in ("reconstruction", "evaluation", "pretrain")]
    assert [len(x) for x in sets] == [30, 40, 20]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    with pytest.raises(ConfigError):
        make_splits(d, 60, 50, seed=1)


# ---------------------------------------------------------------- evaluation

def test_proxy_accuracy_extremes():
    g = builtin("toy_cnn", widths=(2, 2, 2, 2), classes=4)
    w = init_weights(g, rng_stream(1))
    n = 2000
    x = rng_stream(2).standard_normal((n,) + g.input_shape).astype(np.float32)
    y = rng_stream(3).integers(0, 4, n)
    acc = proxy_evaluate(g, w, x, y)
    assert abs(acc - 0.25) <= 3 * np.sqrt(0.25 * 0.75 / n)
    assert proxy_evaluate(g, w, x, predict(g, w, x)) == 1.0


# ---------------------------------------------------------------- config

def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "population": 8, "data": {"format": "synthetic"}}))
    cfg = load_config(p, {"population": 12, "generations": None})
    assert (cfg.seed, cfg.population, cfg.generations) == (3, 12, RunConfig().generations)
    p.write_text(json.dumps({"seed": 3, "populaton": 8}))
    with pytest.raises(ConfigError):
        load_config(p, {})
    with pytest.raises(ConfigError):
        RunConfig().check()


# ---------------------------------------------------------------- CLI

SMALL = ["--population", "4", "--generations", "1", "--initial", "6", "--reconstruction", "48",
         "--evaluation", "64", "--pretrain", "256",
         "--data", json.dumps({"format": "synthetic", "classes": 4, "dims": [3, 8, 8],
                               "samples": 512, "seed": 7}),
         "--model-args", json.dumps({"widths": [4, 4, 8, 8]})]


def run_search(out, *extra):
    return main(["search", "--seed", "1", "--output", str(out), *SMALL, *extra])


def test_cli_search_outputs_and_thread_independence(tmp_path, capsys):
    assert run_search(tmp_path / "a", "--threads", "1") == 0
    assert run_search(tmp_path / "b", "--threads", "8") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "pareto.csv").read_text() == (b / "pareto.csv").read_text()
    log_a = [json.loads(l) for l in (a / "runlog.jsonl").read_text().splitlines()]
    log_b = [json.loads(l) for l in (b / "runlog.jsonl").read_text().splitlines()]
    strip = lambda log: [{k: v for k, v in r.items() if k != "eval_ms"} for r in log]
    assert strip(log_a) == strip(log_b) and len(log_a) == 6 + 4
    for name in ("config.json", "model.json", "base.eapw", "pareto.svg"):
        assert (a / name).exists()
    assert (a / "pareto.svg").read_text().startswith("<svg")
    rows = list(csv.DictReader((a / "pareto.csv").open()))
    assert rows and set(rows[0]) == {"genome", "flops", "proxy_accuracy"}

    capsys.readouterr()
    # export every front member: reloaded accuracy equals the logged one
    for i in range(len(rows)):
        assert main(["export", str(a), str(i)]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["match"] and res["flops"] == int(rows[i]["flops"])
        assert (Path(res["output"]) / "weights.eapw").exists()
    assert main(["export", str(a), str(len(rows))]) == 2
    assert main(["report", str(a)]) == 2          # CNN run: no transformer blocks


def test_cli_transformer_report(tmp_path, capsys):
    out = tmp_path / "vit"
    args = ["search", "--seed", "2", "--output", str(out), "--model", "toy_transformer",
            "--space-mode", "vit-head-count", "--population", "4", "--generations", "0",
            "--initial", "4", "--reconstruction", "24", "--evaluation", "32", "--pretrain", "128",
            "--data", json.dumps({"format": "synthetic", "classes": 4, "dims": [3, 8, 8],
                                  "samples": 256, "seed": 7})]
    assert main(args) == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "blocks.0" in text and (out / "retention.csv").exists()
    assert (out / "retention.svg").read_text().startswith("<svg")


def test_cli_flops(capsys):
    assert main(["flops", "resnet50"]) == 0
    assert capsys.readouterr().out.startswith("4089184256 MACs")
    g = builtin("toy_cnn")
    space = build_space(g)
    full = ",".join(map(str, space.full()))
    assert main(["flops", "toy_cnn", "--genome", full]) == 0
    assert capsys.readouterr().out.startswith(f"{count_flops(g)} MACs")
    lows = tuple(gn.lower for gn in space.genes)
    assert main(["flops", "toy_cnn", "--genome", ",".join(map(str, lows))]) == 0
    assert capsys.readouterr().out.startswith(f"{count_flops(g, space.sizes(lows))} MACs")


def test_cli_exit_codes(tmp_path):
    assert main(["search", "--output", str(tmp_path / "x"), *SMALL]) == 2          # no seed
    assert main(["search", "--seed", "1", "--population", "1", *SMALL[2:]]) == 2
    assert main(["flops", "no_such_model"]) == 2
    assert main(["flops", "toy_cnn", "--genome", "0,1,1,1,1,1"]) == 2
    bad = tmp_path / "bad.eapw"
    bad.write_bytes(b"EAPX" + bytes(20))
    assert run_search(tmp_path / "y", "--weights", str(bad)) == 3
    assert run_search(tmp_path / "y", "--weights", str(tmp_path / "missing.eapw")) == 3
    g = builtin("toy_cnn", widths=(4, 4, 8, 8))
    w = init_weights(g, rng_stream(0))
    w["block1.conv1"]["kernel"][:] = np.nan
    save_weights(w, tmp_path / "nan.eapw")
    assert run_search(tmp_path / "z", "--weights", str(tmp_path / "nan.eapw")) == 4


def test_prepare_rejects_mismatched_data():
    cfg = RunConfig(seed=1, data={"format": "synthetic", "classes": 3, "dims": [3, 8, 8],
                                  "samples": 64, "seed": 0}, reconstruction=8, evaluation=8,
                    pretrain=8)
    with pytest.raises(ConfigError):
        prepare(cfg)
