"""End-to-end acceptance checks. Each test prints one PASS/FAIL line with the
measured quantity next to its threshold; the assertion then enforces it.

The search-based criteria (7-9) run desk-scale searches and take several
minutes in total on one core; they are marked ``slow``.
"""

import json
import struct
import time

import numpy as np
import pytest

from eaprune.cli import main
from eaprune.errors import FormatError
from eaprune.evolve.metrics import compare_fronts, hypervolume
from eaprune.evolve.nsga3 import fast_nondominated_sort
from eaprune.evolve.search import SearchConfig, evolve, random_search
from eaprune.harness.config import RunConfig
from eaprune.harness.data import parse_idx
from eaprune.harness.evaluate import proxy_evaluate
from eaprune.harness.experiments import (
    _fa, cmd_flops, headnum_vs_headdim, normalized_points, prepare,
)
from eaprune.netgraph import builtin, count_flops, forward, init_weights, load_weights, save_weights
from eaprune.prunespace import build_space, decode
from eaprune.reconstruct import CalibrationBatch, reconstruct_network
from eaprune.rng import rng_stream
from eaprune.tensor import least_squares_solve

from test_evolve import brute_fronts
from test_netgraph import random_store
from test_tensor import gd_oracle

SEEDS = (1, 2, 3)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {n:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


# ---------------------------------------------------------------- 1

@pytest.mark.parametrize("name, published, tol", [
    ("resnet50", 4111e6, 0.01), ("mobilenet_v1", 569e6, 0.01), ("deit_base", 17.8e9, 0.02)])
def test_1_flops_reproduction(report, name, published, tol):
    t0 = time.perf_counter()
    n = cmd_flops(name)
    dt = time.perf_counter() - t0
    err = abs(n - published) / published
    ok = err <= tol and dt < 1.0
    report(1, ok, f"{name}: {n / 1e6:.1f}M vs {published / 1e6:.0f}M, rel err {err:.4f} "
                  f"(tol {tol}), {dt * 1e3:.0f} ms (< 1000)")
    assert ok


# ---------------------------------------------------------------- 2

class CheapEval:
    def __call__(self, genome):
        s = float(sum(genome))
        return 1.0 - np.exp(-s / 200.0), int(sum(v * v for v in genome))


@pytest.mark.parametrize("initial, pop, gens, want", [(64, 50, 30, 1564), (64, 32, 47, 1568)])
def test_2_budget_accounting(report, initial, pop, gens, want):
    space = build_space(builtin("toy_cnn"))
    res = evolve(space, CheapEval(), SearchConfig(population=pop, generations=gens,
                                                  initial=initial, seed=1))
    logged = len(res.archive.runlog().splitlines())
    ok = logged == want == res.archive.evaluations
    report(2, ok, f"init {initial}, pop {pop}, {gens} iters: {logged} ledger rows (want {want})")
    assert ok


# ---------------------------------------------------------------- 3

def test_3_solver_oracle(report):
    rng = rng_stream(3)
    worst_rel, worst_grad, solve_time = 0.0, 0.0, 0.0
    for _ in range(100):
        a = rng.standard_normal((200, 16)) * rng.uniform(0.1, 10.0, 16)
        b = rng.standard_normal((200, 8))
        t0 = time.perf_counter()
        w = least_squares_solve(a, b).astype(np.float64)
        solve_time += time.perf_counter() - t0
        ref = np.linalg.norm(a @ gd_oracle(a, b) - b)
        worst_rel = max(worst_rel, abs(np.linalg.norm(a @ w - b) - ref) / ref)
        grad = np.abs(a.T @ (a @ w - b)).max() / np.abs(a.T @ b).max()
        worst_grad = max(worst_grad, grad)
    ok = worst_rel <= 1e-4 and worst_grad < 1e-3 and solve_time < 5.0
    report(3, ok, f"worst residual rel diff {worst_rel:.2e} (<= 1e-4), worst gradient ratio "
                  f"{worst_grad:.2e} (< 1e-3), solver time {solve_time:.2f} s (< 5)")
    assert ok


# ---------------------------------------------------------------- 4

@pytest.mark.parametrize("name, mode", [("toy_cnn", "cnn-channels"),
                                        ("toy_transformer", "vit-head-count"),
                                        ("toy_transformer", "vit-head-dim")])
def test_4_reconstruction_identity(report, name, mode):
    g = builtin(name)
    w = init_weights(g, rng_stream(4))
    space = build_space(g, mode)
    x = rng_stream(4, 1).standard_normal((64,) + g.input_shape).astype(np.float32)
    sub = decode(g, w, space, space.full(), "random", rng_stream(4, 2))
    new, _ = reconstruct_network(sub, g, w, CalibrationBatch(x), rng_stream(4, 3))
    err = float(np.abs(forward(sub.graph, new, x) - forward(g, w, x)).max())
    ok = err <= 1e-4
    report(4, ok, f"{name} ({mode}): max |logit diff| {err:.2e} (<= 1e-4)")
    assert ok


# ---------------------------------------------------------------- 5

def test_5_reconstruction_benefit(report):
    t0 = time.perf_counter()
    ctx = prepare(RunConfig(seed=5).check())
    ev_set = ctx.splits.evaluation
    ge, gt = 0, 0
    pairs = []
    for seed in range(10):
        ev = ctx.evaluator(seed=seed)
        genome = tuple(gn.lower + max(0, round((gn.upper / 2 - gn.lower) / gn.step)) * gn.step
                       for gn in ev.space.genes)
        sub, new, _ = ev.build(genome)
        naive = proxy_evaluate(sub.graph, sub.weights, ev_set.images, ev_set.labels)
        rec = proxy_evaluate(sub.graph, new, ev_set.images, ev_set.labels)
        ge += rec >= naive
        gt += rec > naive
        pairs.append(f"{rec:.3f}/{naive:.3f}")
    dt = time.perf_counter() - t0
    ok = ge == 10 and gt >= 8 and dt < 120
    report(5, ok, f"reconstructed >= naive {ge}/10 (need 10), > naive {gt}/10 (need 8), "
                  f"{dt:.0f} s (< 120); rec/naive {' '.join(pairs)}")
    assert ok


# ---------------------------------------------------------------- 6

def test_6_sort_oracle(report):
    mismatches = 0
    for seed in range(20):
        rng = rng_stream(6, seed)
        pts = rng.integers(0, 60, size=(1000, 2)).astype(float) if seed % 2 else rng.random((1000, 2))
        mismatches += fast_nondominated_sort(pts) != brute_fronts(pts)
    ok = mismatches == 0
    report(6, ok, f"{20 - mismatches}/20 seeds match brute force exactly on 1000 points")
    assert ok


# ---------------------------------------------------------------- 7 and 8

SEARCH_SETUP = dict(reconstruction=256, evaluation=512, initial=56, population=32,
                    generations=17, threads=1)


@pytest.fixture(scope="module")
def cnn_runs():
    """Per seed: NSGA-III (random selection), random search of equal budget and
    NSGA-III with l1-norm selection, all on the same model and splits."""
    runs = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        cfg = RunConfig(seed=seed, **SEARCH_SETUP).check()
        ctx = prepare(cfg)
        space = ctx.space()
        sc = cfg.search_config()
        nsga = evolve(space, ctx.evaluator("random"), sc)
        t_nsga = time.perf_counter() - t0
        rand = random_search(space, ctx.evaluator("random"), nsga.archive.evaluations, seed)
        t_pair = time.perf_counter() - t0
        l1 = evolve(space, ctx.evaluator("l1norm"), sc)
        runs[seed] = {"nsga": nsga, "random": rand, "l1": l1, "full": count_flops(ctx.graph),
                      "time_pair": t_pair, "time_nsga": t_nsga}
    return runs


@pytest.mark.slow
def test_7_nsga_vs_random(report, cnn_runs):
    wins, lines, total = 0, [], 0.0
    for seed, r in cnn_runs.items():
        hv_n = hypervolume(normalized_points(r["nsga"].front, r["full"]), (1.0, 1.0))
        hv_r = hypervolume(normalized_points(r["random"].front, r["full"]), (1.0, 1.0))
        wins += hv_n >= hv_r
        total += r["time_pair"]
        lines.append(f"seed {seed}: {hv_n:.3f} vs {hv_r:.3f} "
                     f"({r['nsga'].archive.evaluations}/{r['random'].archive.evaluations} evals)")
    ok = wins == len(SEEDS) and total < 15 * 60
    report(7, ok, f"NSGA hypervolume >= random in {wins}/3 seeds, {total / 60:.1f} min (< 15); "
                  + "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_8_l1_vs_random(report, cnn_runs):
    gaps = []
    for seed, r in cnn_runs.items():
        cmp = compare_fronts(_fa(r["l1"].front), _fa(r["nsga"].front))
        gaps.append(cmp["mean_abs_gap"])
    gap = float(np.mean(gaps))
    ok = gap <= 0.01
    report(8, ok, f"mean |l1 - random| accuracy gap at matched-FLOPs deciles {gap:.4f} (<= 0.01); "
                  f"per seed {', '.join(f'{g:.4f}' for g in gaps)}")
    assert ok


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_9_headnum_vs_headdim(report):
    fractions = []
    for seed in SEEDS:
        cfg = RunConfig(seed=seed, model="toy_transformer", space_mode="vit-head-count",
                        reconstruction=64, evaluation=512, initial=24, population=16,
                        generations=5, threads=1,
                        data={"format": "synthetic", "classes": 4, "dims": [3, 8, 8],
                              "samples": 4096, "seed": 7, "separation": 0.5}).check()
        res = headnum_vs_headdim(prepare(cfg))
        fractions.append(res["comparison"]["a_dominance_fraction"])
    frac = float(np.mean(fractions))
    ok = frac >= 0.7
    report(9, ok, f"head-count front weakly dominates at {frac:.0%} of matched-FLOPs deciles "
                  f"(>= 70%); per seed {', '.join(f'{f:.0%}' for f in fractions)}")
    assert ok


# ---------------------------------------------------------------- 10

def test_10_determinism(report, tmp_path):
    base = ["search", "--seed", "10", "--population", "6", "--generations", "2",
            "--initial", "8", "--reconstruction", "64", "--evaluation", "128",
            "--pretrain", "512",
            "--data", json.dumps({"format": "synthetic", "classes": 4, "dims": [3, 8, 8],
                                  "samples": 1024, "seed": 7})]
    outs = []
    for tag, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        assert main(base + ["--output", str(tmp_path / tag), "--threads", threads]) == 0
        outs.append(tuple((tmp_path / tag / f).read_bytes() for f in ("pareto.csv", "runlog.jsonl")))
    ok = outs[0] == outs[1] == outs[2]
    report(10, ok, "pareto.csv and runlog.jsonl byte-identical across repeat run and threads 1 vs 8"
             if ok else "outputs differ between runs")
    assert ok


# ---------------------------------------------------------------- 11

def test_11_format_round_trips(report, tmp_path):
    rng = rng_stream(11)
    identical = 0
    for _ in range(50):
        store = random_store(rng)
        save_weights(store, tmp_path / "w.eapw")
        back = load_weights(tmp_path / "w.eapw")
        identical += (back.keys() == store.keys() and all(
            back[l].keys() == store[l].keys() and all(
                back[l][p].shape == a.shape and back[l][p].tobytes() == a.tobytes()
                for p, a in store[l].items())
            for l in store))
    dims = (2, 3, 4)
    good = b"\x00\x00\x08\x03" + struct.pack(">3I", *dims) + bytes(24)
    cases = [(b"\x01" + good[1:], 0), (good[:2] + b"\x07" + good[3:], 2), (good[:6], 6),
             (good[:-5], 35), (good + b"\x00", 40)]
    caught = 0
    for buf, offset in cases:
        try:
            parse_idx(buf)
        except FormatError as exc:
            caught += exc.offset == offset
    ok = identical == 50 and caught == 5
    report(11, ok, f"EAPW bitwise round trips {identical}/50; IDX corruptions rejected at the "
                   f"right offset {caught}/5")
    assert ok
