import json
from math import comb

import numpy as np
import pytest

from eaprune.errors import ConfigError
from eaprune.evolve import nsga3
from eaprune.evolve.metrics import attainment, compare_fronts, hypervolume, matched_deciles
from eaprune.evolve.search import (
    Archive, Individual, SearchConfig, evolve, next_generation, pareto_front, random_search,
)
from eaprune.prunespace import Gene, SpaceSpec
from eaprune.rng import rng_stream


def brute_fronts(objs):
    f = np.asarray(objs)
    remaining = set(range(len(f)))
    fronts = []
    while remaining:
        front = sorted(i for i in remaining
                       if not any(nsga3.dominates(f[j], f[i]) for j in remaining if j != i))
        fronts.append(front)
        remaining -= set(front)
    return fronts


# ---------------------------------------------------------------- sorting

def test_sort_hand_cases():
    assert nsga3.fast_nondominated_sort([(1, 1)]) == [[0]]
    assert nsga3.fast_nondominated_sort([(1, 2), (2, 1), (2, 2)]) == [[0, 1], [2]]
    assert not nsga3.dominates((1, 1), (1, 1))


@pytest.mark.parametrize("seed", range(3))
def test_sort_matches_brute_force(seed):
    rng = rng_stream(1, seed)
    objs = rng.integers(0, 30, size=(300, 2)).astype(float)   # many ties
    assert nsga3.fast_nondominated_sort(objs) == brute_fronts(objs)


def test_das_dennis():
    for p in (1, 4, 99):
        refs = nsga3.das_dennis(p)
        assert len(refs) == comb(p + 1, 1)
        np.testing.assert_allclose(refs.sum(axis=1), 1.0)
        assert (refs >= 0).all()
    assert len(nsga3.das_dennis(4, 3)) == comb(6, 2)


def test_association_ties_to_lower_index():
    refs = np.array([[1.0, 0.0], [0.0, 1.0]])
    idx, dist = nsga3.associate(np.array([[1.0, 1.0], [2.0, 0.1]]), refs)
    assert idx.tolist() == [0, 0]


def test_normalize_degenerate_guard():
    out = nsga3.normalize(np.array([[1.0, 5.0], [1.0, 5.0]]))
    assert np.isfinite(out).all()


# ---------------------------------------------------------------- selection

def test_select_preserves_size_and_prefers_fronts():
    rng = rng_stream(2)
    refs = nsga3.das_dennis(99)
    for trial in range(30):
        objs = rng.random((40, 2))
        keep = nsga3.select(objs, 20, refs, rng_stream(3, trial))
        assert len(keep) == 20 == len(set(keep))
        dropped = set(range(40)) - set(keep)
        # nothing kept is dominated by something dropped
        for k in keep:
            assert not any(nsga3.dominates(objs[d], objs[k]) for d in dropped)


def test_select_keeps_extremes_of_a_split_first_front():
    x = np.linspace(0, 1, 30)
    objs = np.stack([x, 1 - x], axis=1)
    keep = nsga3.select(objs, 5, nsga3.das_dennis(99), rng_stream(4))
    assert 0 in keep and 29 in keep


class Toy:
    """Cheap deterministic evaluator: accuracy rises with width, with a wiggle."""
    def __init__(self, fail=()):
        self.calls = 0
        self.fail = set(fail)

    def __call__(self, genome):
        self.calls += 1
        if tuple(genome) in self.fail:
            raise RuntimeError("boom")
        s = float(np.sum(genome))
        acc = 1.0 - np.exp(-s / 40.0) - 0.01 * ((s * 7919) % 13) / 13.0
        return acc, int(sum(v * v for v in genome))


def toy_space(n=10, hi=16):
    return SpaceSpec(tuple(Gene(i, 1, hi, 1) for i in range(n)), "cnn-channels")


def test_dominated_offspring_keep_parents_extremes():
    space = toy_space()
    parents = [Individual((i,) * 10, (1.0 - i / 20, float(i)), 0) for i in range(1, 9)]

    def worst(genome):
        return 0.0, 10 ** 6        # every offspring is dominated by every parent

    archive = Archive(seen={p.genome for p in parents})
    cfg = SearchConfig(population=len(parents), seed=1)
    survivors = next_generation(parents, space, worst, cfg, archive, 1)
    assert sorted(s.genome for s in survivors) == sorted(p.genome for p in parents)


@pytest.mark.parametrize("initial, pop, gens, total", [(64, 50, 30, 1564), (64, 32, 47, 1568)])
def test_budget_accounting(initial, pop, gens, total):
    ev = Toy()
    res = evolve(toy_space(), ev, SearchConfig(population=pop, generations=gens, initial=initial, seed=5))
    assert res.archive.evaluations == total == ev.calls
    assert len(res.archive.runlog().splitlines()) == total
    assert len(res.archive.seen) == total


def test_offspring_are_never_reevaluated():
    ev = Toy()
    space = SpaceSpec((Gene(0, 1, 3, 1), Gene(1, 1, 3, 1)), "cnn-channels")   # only 9 genomes
    res = evolve(space, ev, SearchConfig(population=4, generations=10, initial=4, seed=6,
                                         max_attempts=20))
    genomes = [json.loads(l)["genome"] for l in res.archive.runlog().splitlines()]
    assert len(genomes) == len(set(genomes)) == ev.calls <= 9
    assert res.archive.cache_hits > 0


def test_zero_generations_front_is_initial_nondominated_set():
    res = evolve(toy_space(), Toy(), SearchConfig(population=8, generations=0, initial=30, seed=7))
    objs = [i.objectives for i in res.archive.individuals]
    first = brute_fronts(objs)[0]
    # identical objective vectors collapse to the earliest individual
    want = {}
    for i in first:
        want.setdefault(tuple(objs[i]), res.archive.individuals[i].genome)
    assert sorted(m.genome for m in res.front) == sorted(want.values())


def test_failures_are_logged_and_skipped():
    space = toy_space(3, 4)
    res0 = evolve(space, Toy(), SearchConfig(population=4, generations=0, initial=6, seed=8))
    rng_genomes = {i.genome for i in res0.archive.individuals}
    bad = sorted(rng_genomes)[:2]
    res = evolve(space, Toy(fail=bad), SearchConfig(population=4, generations=2, initial=6, seed=8))
    assert res.archive.failures == 2
    assert all(i.genome not in bad for i in res.archive.individuals)


def test_config_errors():
    with pytest.raises(ConfigError):
        SearchConfig(population=1)
    with pytest.raises(ConfigError):
        SearchConfig(mutation_prob=1.5)


def test_determinism_and_thread_independence():
    cfg = dict(population=10, generations=5, initial=16, seed=9)
    a = evolve(toy_space(), Toy(), SearchConfig(**cfg, threads=1))
    b = evolve(toy_space(), Toy(), SearchConfig(**cfg, threads=4))
    assert a.archive.runlog() == b.archive.runlog()
    assert a.front.to_csv() == b.front.to_csv()


def test_archive_monotonicity_and_front_invariants():
    snapshots = []

    def on_gen(gen, pop, archive):
        snapshots.append(list(archive.individuals))

    res = evolve(toy_space(), Toy(), SearchConfig(population=10, generations=6, initial=16, seed=10),
                 on_generation=on_gen)
    budgets = np.linspace(50, 2560, 12)
    prev = None
    for inds in snapshots:
        best = [min([i.objectives[0] for i in inds if i.objectives[1] <= b] or [np.inf]) for b in budgets]
        if prev is not None:
            assert all(x <= y for x, y in zip(best, prev))
        prev = best
    flops = [m.flops for m in res.front]
    assert flops == sorted(flops) and len(set(flops)) == len(flops)
    pts = res.front.points()
    for i in range(len(pts)):
        for j in range(len(pts)):
            assert not nsga3.dominates(pts[i], pts[j])
    lines = res.front.to_csv().splitlines()
    assert lines[0] == "genome,flops,proxy_accuracy" and all(l.count(",") == 2 for l in lines)


def test_front_cap_thins_by_flops_rank():
    inds = [Individual((i,), (1.0 - i / 100, float(i)), 0) for i in range(1, 51)]
    front = pareto_front(inds, cap=5)
    assert len(front) == 5
    assert front.members[0].flops == 1 and front.members[-1].flops == 50


def test_random_search_budget():
    ev = Toy()
    res = random_search(toy_space(), ev, 100, seed=11)
    assert res.archive.evaluations == 100 == ev.calls


# ---------------------------------------------------------------- metrics

def test_hypervolume_trivia():
    assert hypervolume([], (1, 1)) == 0.0
    assert hypervolume([(0.5, 0.5)], (1, 1)) == 0.25
    assert hypervolume([(0.5, 0.5), (0.6, 0.6)], (1, 1)) == 0.25
    assert hypervolume([(2, 0.5)], (1, 1)) == 0.0


def test_hypervolume_matches_monte_carlo():
    rng = rng_stream(12)
    for trial in range(5):
        x = np.sort(rng.random(8))
        pts = np.stack([x, 1 - x ** 0.5 + 0.05 * rng.random(8)], axis=1)
        samples = rng.random((400000, 2)) * np.array([1.0, 1.1])
        dominated = np.zeros(len(samples), bool)
        for p in pts:
            dominated |= (samples[:, 0] >= p[0]) & (samples[:, 1] >= p[1])
        mc = dominated.mean() * 1.1
        assert abs(hypervolume(pts, (1.0, 1.1)) - mc) <= 0.01 * mc


def test_attainment_and_comparison():
    assert attainment([1, 2, 3], [0.1, 0.5, 0.7], 2.5) == 0.5
    assert np.isnan(attainment([1], [0.1], 0.5))
    assert len(matched_deciles([0, 10], [5, 20])) == 10
    a = (np.array([1.0, 5.0, 9.0]), np.array([0.2, 0.5, 0.8]))
    cmp = compare_fronts(a, a)
    assert cmp["mean_abs_gap"] == 0.0 and cmp["a_dominance_fraction"] == 1.0
    b = (a[0], a[1] - 0.1)
    assert abs(compare_fronts(a, b)["mean_abs_gap"] - 0.1) < 1e-12


def test_all_failing_initial_set_raises():
    def broken(genome):
        raise ArithmeticError("nan everywhere")

    with pytest.raises(ArithmeticError):
        evolve(toy_space(), broken, SearchConfig(population=4, generations=1, initial=4, seed=1))
