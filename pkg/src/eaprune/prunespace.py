"""Search-space encoding: genomes over channel counts, heads and MLP widths.

A genome stores one kept count per gene; each gene points at a dependency
group. Decoding picks concrete channel indices per group and slices every
member layer of that group consistently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, EmptySpaceError
from .netgraph.flops import count_flops
from .netgraph.graph import (
    HEAD_DIM, HEADS, HIDDEN, IN, OUT, DependencyGroup, NetworkGraph, effective_hyperparams,
)

MODES = ("cnn-channels", "vit-head-count", "vit-head-dim")
STRATEGIES = ("random", "l1norm")
VIT_STEPS = 16


@dataclass(frozen=True)
class Gene:
    group: int
    lower: int
    upper: int
    step: int

    def lattice(self) -> np.ndarray:
        return np.arange(self.lower, self.upper + 1, self.step)

    def contains(self, v) -> bool:
        return self.lower <= v <= self.upper and (v - self.lower) % self.step == 0


@dataclass(frozen=True)
class SpaceSpec:
    genes: tuple
    mode: str

    def __len__(self):
        return len(self.genes)

    def full(self) -> tuple:
        return tuple(g.upper for g in self.genes)

    def sizes(self, genome) -> dict:
        """Kept count per group id."""
        return {g.group: int(v) for g, v in zip(self.genes, genome)}

    def check(self, genome) -> None:
        if len(genome) != len(self.genes):
            raise BoundsError(f"genome has {len(genome)} values, space has {len(self.genes)} genes")
        for i, (g, v) in enumerate(zip(self.genes, genome)):
            if not g.contains(v):
                raise BoundsError(
                    f"gene {i} (group {g.group}): value {v} not on lattice "
                    f"[{g.lower}..{g.upper} step {g.step}]"
                )

    def encoding_bits(self) -> float:
        """Sum of log2(original width) over genes."""
        return sum(math.log2(g.upper) for g in self.genes)


def _lattice_lower(upper, step, floor):
    """Smallest lattice point (anchored at ``upper``) that is >= ``floor``."""
    n = (upper - floor) // step
    return upper - n * step


def build_space(graph: NetworkGraph, mode="cnn-channels", min_ratio=0.1) -> SpaceSpec:
    if mode not in MODES:
        raise ValueError(f"unknown space mode {mode!r}; choose from {MODES}")
    genes = []
    for grp in graph.groups:
        axes = {axis for _, axis in grp.members}
        c = grp.original_size
        if mode == "cnn-channels" and axes <= {OUT, IN}:
            genes.append(Gene(grp.id, _lattice_lower(c, 1, max(1, math.ceil(min_ratio * c))), c, 1))
        elif mode != "cnn-channels" and HIDDEN in axes:
            step = max(1, c // VIT_STEPS)
            genes.append(Gene(grp.id, _lattice_lower(c, step, max(step, math.ceil(min_ratio * c))),
                              c, step))
        elif mode == "vit-head-count" and HEADS in axes:
            genes.append(Gene(grp.id, 1, c, 1))
        elif mode == "vit-head-dim" and HEAD_DIM in axes:
            step = max(1, c // VIT_STEPS)
            genes.append(Gene(grp.id, _lattice_lower(c, step, max(step, math.ceil(min_ratio * c))),
                              c, step))
    if not genes:
        raise EmptySpaceError(f"graph has no prunable groups for mode {mode!r}")
    return SpaceSpec(tuple(genes), mode)


def prunable_channel_count(graph: NetworkGraph, space: SpaceSpec) -> int:
    """Channels consumed downstream of the encoded groups (sum of consumer in-widths)."""
    total = 0
    for gene in space.genes:
        grp = graph.group(gene.group)
        total += grp.original_size * sum(1 for _, axis in grp.members if axis == IN)
    return total


# ---------------------------------------------------------------- genetic operators

def random_genome(space: SpaceSpec, rng: np.random.Generator) -> tuple:
    return tuple(int(g.lower + g.step * rng.integers(0, (g.upper - g.lower) // g.step + 1))
                 for g in space.genes)


def mutate(genome, space: SpaceSpec, rng: np.random.Generator, p_m: float) -> tuple:
    """Resample each gene uniformly on its lattice with probability ``p_m``."""
    fresh = random_genome(space, rng)
    flips = rng.random(len(space.genes)) < p_m
    return tuple(int(n) if f else int(v) for v, n, f in zip(genome, fresh, flips))


def crossover(a, b, rng: np.random.Generator) -> tuple:
    """Uniform crossover: each gene from ``a`` or ``b`` with probability 1/2."""
    pick = rng.random(len(a)) < 0.5
    return tuple(int(x) if p else int(y) for x, y, p in zip(a, b, pick))


def genome_to_text(genome, sep=",") -> str:
    return sep.join(str(int(v)) for v in genome)


def genome_from_text(text: str) -> tuple:
    parts = text.replace(";", ",").split(",")
    return tuple(int(p) for p in parts if p.strip())


# ---------------------------------------------------------------- channel selection

def producer_scores(graph: NetworkGraph, weights: dict, group: DependencyGroup) -> np.ndarray:
    """Per-channel l1 norm of the group's primary producer kernel slices."""
    for layer, axis in group.members:
        l = graph.layer(layer)
        p = weights.get(layer, {})
        if axis == OUT and l.kind == "conv2d":
            k = p["kernel"]
            return np.abs(k.astype(np.float64)).reshape(k.shape[0], -1).sum(axis=1)
        if axis == OUT and l.kind == "dense":
            return np.abs(p["weight"].astype(np.float64)).sum(axis=1)
        if axis in (HEADS, HEAD_DIM) and l.kind == "attention":
            h, dh = l.hp("head_count"), l.hp("head_dim")
            w = np.abs(p["qkv_weight"].astype(np.float64)).reshape(3, h, dh, -1)
            return w.sum(axis=(0, 2, 3)) if axis == HEADS else w.sum(axis=(0, 1, 3))
        if axis == HIDDEN and l.kind == "mlp-block":
            return np.abs(p["fc1_weight"].astype(np.float64)).sum(axis=1)
    raise ValueError(f"group {group.id} has no producer layer to score")


def select_channels(weights: dict, group: DependencyGroup, kept_count: int, strategy: str,
                    rng: np.random.Generator, graph: NetworkGraph = None) -> list:
    n = group.original_size
    if not 1 <= kept_count <= n:
        raise BoundsError(f"group {group.id}: kept count {kept_count} outside [1, {n}]")
    if strategy == "random":
        if kept_count == n:
            return list(range(n))
        return sorted(int(i) for i in rng.choice(n, size=kept_count, replace=False))
    if strategy == "l1norm":
        scores = producer_scores(graph, weights, group)
        # stable sort on -score keeps the lower index first among ties
        order = np.argsort(-scores, kind="stable")
        return sorted(int(i) for i in order[:kept_count])
    raise ValueError(f"unknown selection strategy {strategy!r}; choose from {STRATEGIES}")


# ---------------------------------------------------------------- decoding

@dataclass
class Subnetwork:
    graph: NetworkGraph
    selection: dict   # group id -> sorted kept indices
    weights: dict     # sliced, not yet reconstructed
    flops: int
    genome: tuple = ()


def _head_rows(kept_heads, kept_dims, heads, head_dim):
    """Row indices of a [3*H*dh, D] qkv weight for the kept heads and dims."""
    rows = []
    for part in range(3):
        for h in kept_heads:
            base = (part * heads + h) * head_dim
            rows.extend(base + d for d in kept_dims)
    return np.asarray(rows, dtype=np.int64)


def _head_cols(kept_heads, kept_dims, head_dim):
    return np.asarray([h * head_dim + d for h in kept_heads for d in kept_dims], dtype=np.int64)


def slice_weights(graph: NetworkGraph, weights: dict, selection: dict) -> dict:
    """Slice every parameter tensor along the axes governed by ``selection``."""
    def sel(layer, axis):
        gid = graph.axis_group(layer, axis)
        return None if gid is None or gid not in selection else np.asarray(selection[gid])

    out = {}
    for l in graph.layers:
        p = weights.get(l.name)
        if p is None:
            continue
        q = dict(p)
        if l.kind == "conv2d":
            o, i = sel(l.name, OUT), sel(l.name, IN)
            k = p["kernel"]
            if o is not None:
                k = k[o]
                if "bias" in q:
                    q["bias"] = p["bias"][o]
            if i is not None and not l.depthwise:
                k = k[:, i]
            q["kernel"] = k
        elif l.kind in ("dense", "classifier"):
            o = sel(l.name, OUT) if l.kind == "dense" else None
            i = sel(l.name, IN)
            w = p["weight"]
            if o is not None:
                w = w[o]
                if "bias" in q:
                    q["bias"] = p["bias"][o]
            if i is not None:
                w = w[:, i]
            q["weight"] = w
        elif l.kind == "batchnorm":
            o = sel(l.name, OUT)
            if o is not None:
                q = {k: v[o] for k, v in p.items()}
        elif l.kind == "attention":
            heads, dh = l.hp("head_count"), l.hp("head_dim")
            kh = sel(l.name, HEADS)
            kd = sel(l.name, HEAD_DIM)
            kh = np.arange(heads) if kh is None else kh
            kd = np.arange(dh) if kd is None else kd
            rows = _head_rows(kh, kd, heads, dh)
            cols = _head_cols(kh, kd, dh)
            q["qkv_weight"] = p["qkv_weight"][rows]
            q["qkv_bias"] = p["qkv_bias"][rows]
            q["proj_weight"] = p["proj_weight"][:, cols]
        elif l.kind == "mlp-block":
            h = sel(l.name, HIDDEN)
            if h is not None:
                q["fc1_weight"] = p["fc1_weight"][h]
                q["fc1_bias"] = p["fc1_bias"][h]
                q["fc2_weight"] = p["fc2_weight"][:, h]
        out[l.name] = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in q.items()}
    return out


def shrink_graph(graph: NetworkGraph, sizes: dict) -> NetworkGraph:
    hps = effective_hyperparams(graph, sizes)
    layers = tuple(type(l)(l.name, l.kind, hps[l.name], l.inputs) for l in graph.layers)
    groups = tuple(DependencyGroup(g.id, g.members, int(sizes.get(g.id, g.original_size)))
                   for g in graph.groups)
    return NetworkGraph(layers, groups, graph.input_shape, graph.class_count)


def decode(graph: NetworkGraph, weights: dict, space: SpaceSpec, genome, strategy="random",
           rng: np.random.Generator = None) -> Subnetwork:
    """Materialise ``genome`` as a sliced subnetwork.

    Channel selections are drawn per group in gene order, so a given rng state
    reproduces the same selection.
    """
    genome = tuple(int(v) for v in genome)
    space.check(genome)
    if rng is None:
        rng = np.random.default_rng(0)
    sizes = space.sizes(genome)
    selection = {}
    for gene in space.genes:
        grp = graph.group(gene.group)
        kept = sizes[gene.group]
        selection[gene.group] = select_channels(weights, grp, kept, strategy, rng, graph)
    sub_graph = shrink_graph(graph, sizes)
    sliced = slice_weights(graph, weights, selection)
    return Subnetwork(sub_graph, selection, sliced, count_flops(graph, sizes), genome)
