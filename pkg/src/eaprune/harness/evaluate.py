"""Proxy evaluation of decoded subnetworks and desk-scale "pretraining"."""

from __future__ import annotations

import numpy as np

from ..netgraph.forward import forward
from ..netgraph.graph import NetworkGraph
from ..prunespace import SpaceSpec, decode
from ..reconstruct import (
    DEFAULT_PATCHES, DEFAULT_TOKENS, CalibrationBatch, original_activations,
    reconstruct_network, recalibrate_batchnorm,
)
from ..rng import rng_stream
from ..tensor import argmax_classify, least_squares_solve

STREAM_EVAL = 2
EVAL_BATCH = 512


def predict(graph: NetworkGraph, weights: dict, images, batch_size=EVAL_BATCH) -> np.ndarray:
    preds = [argmax_classify(forward(graph, weights, images[i:i + batch_size]))
             for i in range(0, len(images), batch_size)]
    return np.concatenate(preds)


def proxy_evaluate(graph: NetworkGraph, weights: dict, images, labels) -> float:
    """Top-1 accuracy (fraction) on the evaluation split."""
    return float(np.mean(predict(graph, weights, images) == np.asarray(labels)))


class ProxyEvaluator:
    """decode -> reconstruct -> infer for one genome.

    The random stream of each evaluation is derived from the run seed and the
    genome itself, so results do not depend on evaluation order or threading
    and any logged individual can be rebuilt exactly.
    """

    def __init__(self, graph, weights, space: SpaceSpec, splits, strategy="random", seed=0,
                 patches=None, tokens=None, bn_recalibrate=False):
        self.graph = graph
        self.weights = weights
        self.space = space
        self.splits = splits
        self.strategy = strategy
        self.seed = seed
        self.bn_recalibrate = bn_recalibrate
        self.calib = CalibrationBatch(splits.reconstruction.images,
                                      patches or DEFAULT_PATCHES, tokens or DEFAULT_TOKENS)
        self.original = original_activations(graph, weights, self.calib)

    def build(self, genome):
        """Return ``(subnetwork, reconstructed weights, report)`` for ``genome``."""
        rng = rng_stream(self.seed, STREAM_EVAL, *genome)
        sub = decode(self.graph, self.weights, self.space, genome, self.strategy, rng)
        new, report = reconstruct_network(sub, self.graph, self.weights, self.calib, rng,
                                          self.original)
        if self.bn_recalibrate:
            new = recalibrate_batchnorm(sub.graph, new, self.calib.inputs)
        return sub, new, report

    def __call__(self, genome):
        sub, new, _ = self.build(genome)
        ev = self.splits.evaluation
        return proxy_evaluate(sub.graph, new, ev.images, ev.labels), sub.flops


def fit_readout(graph: NetworkGraph, weights: dict, images, labels, ridge=1e-3) -> dict:
    """Refit the final classifier by ridge regression onto one-hot labels.

    Stands in for training at desk scale: the feature extractor keeps its
    random initialisation and only the linear head is learned.
    """
    head = graph.output
    _, acts = forward(graph, weights, images, capture=True)
    feats = acts[head.inputs[0]]
    if feats.ndim == 3:
        feats = feats[:, 0]
    feats = feats.astype(np.float64)
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0) + 1e-6
    z = (feats - mu) / sd
    n, k = z.shape
    targets = np.eye(graph.class_count)[labels] - 1.0 / graph.class_count
    design = np.concatenate([z, np.sqrt(ridge * n) * np.eye(k)], axis=0)
    rhs = np.concatenate([targets, np.zeros((k, graph.class_count))], axis=0)
    coef = least_squares_solve(design, rhs).astype(np.float64)     # [k x classes]
    w = (coef / sd[:, None]).T
    b = -(mu / sd) @ coef + targets.mean(axis=0)
    new = {name: dict(p) for name, p in weights.items()}
    new[head.name]["weight"] = w.astype(np.float32)
    new[head.name]["bias"] = b.astype(np.float32)
    return new


def pretrain(graph: NetworkGraph, weights: dict, data) -> dict:
    """Calibrate batchnorm statistics, then fit the readout, on ``data``."""
    weights = recalibrate_batchnorm(graph, weights, data.images)
    return fit_readout(graph, weights, data.images, data.labels)
