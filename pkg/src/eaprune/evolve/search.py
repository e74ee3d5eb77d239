"""Generational loop: random initialisation, offspring, evaluation, survivor selection."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..prunespace import SpaceSpec, crossover, genome_to_text, mutate, random_genome
from ..rng import rng_stream
from . import nsga3

log = logging.getLogger(__name__)

# stream ids under the run seed
STREAM_INIT, STREAM_VARIATION, STREAM_EVAL, STREAM_SPLITS, STREAM_SELECT = range(5)


@dataclass(frozen=True)
class Individual:
    genome: tuple
    objectives: tuple       # (1 - proxy_accuracy, flops), both minimised
    generation: int

    @property
    def accuracy(self) -> float:
        return 1.0 - self.objectives[0]

    @property
    def flops(self) -> int:
        return int(self.objectives[1])


@dataclass
class SearchConfig:
    population: int = 50
    mutations: int | None = None      # defaults to population // 2
    crossovers: int | None = None     # defaults to population - mutations
    generations: int = 30
    initial: int = 64
    seed: int = 0
    divisions: int = 99
    mutation_prob: float = 0.1
    max_attempts: int = 200
    front_size: int | None = None
    threads: int = 1
    log_timing: bool = False

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError(f"population must be >= 2, got {self.population}")
        if self.mutations is None:
            self.mutations = self.population // 2
        if self.crossovers is None:
            self.crossovers = self.population - self.mutations
        for name in ("generations", "mutations", "crossovers", "divisions", "max_attempts"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.initial < 1 or self.divisions < 1 or self.threads < 1:
            raise ConfigError("initial, divisions and threads must be positive")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ConfigError("mutation_prob must lie in [0, 1]")


@dataclass
class Archive:
    """Every genome ever proposed, and every successful evaluation in order."""
    seen: set = field(default_factory=set)
    individuals: list = field(default_factory=list)
    records: list = field(default_factory=list)
    evaluations: int = 0
    cache_hits: int = 0
    failures: int = 0
    last_error: Exception | None = field(default=None, repr=False)

    def runlog(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


@dataclass
class ParetoFront:
    members: list      # Individuals sorted by FLOPs ascending

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def points(self) -> np.ndarray:
        return np.array([m.objectives for m in self.members], dtype=np.float64).reshape(-1, 2)

    def to_csv(self) -> str:
        lines = ["genome,flops,proxy_accuracy"]
        for m in self.members:
            lines.append(f"{genome_to_text(m.genome, ';')},{m.flops},{m.accuracy!r}")
        return "\n".join(lines) + "\n"


def pareto_front(individuals, cap=None) -> ParetoFront:
    """Nondominated subset, duplicates of an objective vector collapsed to the
    earliest one, sorted by FLOPs; optionally thinned to ``cap`` members evenly
    spaced in FLOPs rank."""
    if not individuals:
        return ParetoFront([])
    objs = [ind.objectives for ind in individuals]
    first = nsga3.fast_nondominated_sort(objs)[0]
    unique = {}
    for i in sorted(first):
        unique.setdefault(tuple(objs[i]), individuals[i])
    members = sorted(unique.values(), key=lambda m: (m.objectives[1], m.objectives[0]))
    if cap is not None and len(members) > cap:
        keep = sorted(set(np.round(np.linspace(0, len(members) - 1, cap)).astype(int)))
        members = [members[k] for k in keep]
    return ParetoFront(members)


def evaluate_genomes(genomes, evaluator, generation, archive: Archive, threads=1,
                     log_timing=False) -> list:
    """Evaluate new genomes (order preserved); failures are logged and dropped.

    ``evaluator(genome)`` returns ``(proxy_accuracy, flops)``.
    """
    def run(g):
        t0 = time.perf_counter()
        try:
            acc, flops = evaluator(g)
        except Exception as exc:  # one bad individual must not abort the generation
            return g, exc, 0.0
        return g, (float(acc), int(flops)), (time.perf_counter() - t0) * 1e3

    if threads > 1 and len(genomes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, genomes))
    else:
        results = [run(g) for g in genomes]
    out = []
    for g, res, ms in results:
        archive.evaluations += 1
        if isinstance(res, Exception):
            archive.failures += 1
            archive.last_error = res
            log.warning("evaluation of genome %s failed: %r", genome_to_text(g), res)
            continue
        acc, flops = res
        ind = Individual(tuple(g), (1.0 - acc, float(flops)), generation)
        archive.individuals.append(ind)
        archive.records.append({
            "generation": generation, "genome": genome_to_text(g), "flops": flops,
            "proxy_accuracy": acc, "eval_ms": round(ms, 3) if log_timing else None,
        })
        out.append(ind)
    return out


def _propose(make, archive: Archive, batch: set, max_attempts):
    for _ in range(max_attempts):
        g = make()
        if g in archive.seen or g in batch:
            archive.cache_hits += 1
            continue
        batch.add(g)
        return g
    return None


def _tournament(ranks, rng):
    i, j = rng.integers(len(ranks), size=2)
    if ranks[i] != ranks[j]:
        return int(i) if ranks[i] < ranks[j] else int(j)
    return int(i) if rng.random() < 0.5 else int(j)


def next_generation(parents: list, space: SpaceSpec, evaluator, config: SearchConfig,
                    archive: Archive, generation: int, refs=None) -> list:
    """One NSGA-III step: variation, deduplicated evaluation, survivor selection."""
    rng = rng_stream(config.seed, STREAM_VARIATION, generation)
    refs = nsga3.das_dennis(config.divisions) if refs is None else refs
    ranks = nsga3.front_ranks([p.objectives for p in parents])
    batch = set()
    offspring = []

    def mutant():
        parent = parents[_tournament(ranks, rng)]
        return mutate(parent.genome, space, rng, config.mutation_prob)

    def child():
        a = parents[_tournament(ranks, rng)]
        b = parents[_tournament(ranks, rng)]
        return crossover(a.genome, b.genome, rng)

    for make, count in ((mutant, config.mutations), (child, config.crossovers)):
        for _ in range(count):
            g = _propose(make, archive, batch, config.max_attempts)
            if g is not None:
                offspring.append(g)
    archive.seen.update(offspring)
    evaluated = evaluate_genomes(offspring, evaluator, generation, archive, config.threads,
                                 config.log_timing)
    union = list(parents) + evaluated
    keep = nsga3.select([u.objectives for u in union], config.population, refs,
                        rng_stream(config.seed, STREAM_SELECT, generation))
    return [union[i] for i in keep]


@dataclass
class SearchResult:
    front: ParetoFront
    archive: Archive
    population: list


def evolve(space: SpaceSpec, evaluator, config: SearchConfig, on_generation=None) -> SearchResult:
    """Random initial set, then ``config.generations`` NSGA-III generations.

    The returned front is taken over the whole archive of evaluated individuals.
    """
    archive = Archive()
    rng = rng_stream(config.seed, STREAM_INIT)
    batch = set()
    initial = []
    for _ in range(config.initial):
        g = _propose(lambda: random_genome(space, rng), archive, batch, config.max_attempts)
        if g is not None:
            initial.append(g)
    archive.seen.update(initial)
    refs = nsga3.das_dennis(config.divisions)
    pop = evaluate_genomes(initial, evaluator, 0, archive, config.threads, config.log_timing)
    if not pop and archive.last_error is not None:
        # nothing survived the initial set: the evaluator itself is broken
        raise archive.last_error
    keep = nsga3.select([p.objectives for p in pop], config.population, refs,
                        rng_stream(config.seed, STREAM_SELECT, 0)) if pop else []
    pop = [pop[i] for i in keep]
    if on_generation:
        on_generation(0, pop, archive)
    for gen in range(1, config.generations + 1):
        if not pop:
            break
        pop = next_generation(pop, space, evaluator, config, archive, gen, refs)
        if on_generation:
            on_generation(gen, pop, archive)
    return SearchResult(pareto_front(archive.individuals, config.front_size), archive, pop)


def random_search(space: SpaceSpec, evaluator, budget: int, seed: int, threads=1,
                  max_attempts=200) -> SearchResult:
    """Baseline: ``budget`` distinct uniformly random genomes."""
    archive = Archive()
    rng = rng_stream(seed, STREAM_INIT, 1)
    batch = set()
    genomes = []
    for _ in range(budget):
        g = _propose(lambda: random_genome(space, rng), archive, batch, max_attempts)
        if g is not None:
            genomes.append(g)
    archive.seen.update(genomes)
    pop = evaluate_genomes(genomes, evaluator, 0, archive, threads)
    return SearchResult(pareto_front(archive.individuals), archive, pop)


def run_search(graph, weights, config: SearchConfig, data_splits, space=None,
               strategy="random", patches=None, tokens=None, mode="cnn-channels",
               min_ratio=0.1, bn_recalibrate=False):
    """Prune ``graph`` by evolutionary search; returns ``(front, runlog_text, result)``."""
    from ..harness.evaluate import ProxyEvaluator
    from ..prunespace import build_space

    if space is None:
        space = build_space(graph, mode, min_ratio)
    evaluator = ProxyEvaluator(graph, weights, space, data_splits, strategy=strategy,
                               seed=config.seed, patches=patches, tokens=tokens,
                               bn_recalibrate=bn_recalibrate)
    result = evolve(space, evaluator, config)
    return result.front, result.archive.runlog(), result
