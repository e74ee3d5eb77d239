"""Inference by walking the layer list in topological order."""

import numpy as np

from .. import tensor as T
from ..errors import DimensionError
from .graph import INPUT, LayerSpec, NetworkGraph

BN_EPS = 1e-5
LN_EPS = 1e-6


def run_layer(layer: LayerSpec, params: dict, inputs: list, parts: dict = None) -> np.ndarray:
    """Apply one layer. When ``parts`` is a dict, attention and MLP blocks store
    their internal activations in it (``qkv``/``ctx`` and ``hidden``)."""
    hp = layer.hyperparams
    x = inputs[0]
    k = layer.kind
    if k == "conv2d":
        groups = hp["in_channels"] if hp.get("depthwise") else 1
        return T.conv2d_forward(x, params["kernel"], hp["stride"], hp["padding"],
                                params.get("bias"), groups=groups)
    if k == "dense":
        return T.dense_forward(x, params["weight"], params.get("bias"))
    if k == "classifier":
        if x.ndim == 3:
            x = x[:, 0]
        return T.dense_forward(x, params["weight"], params.get("bias"))
    if k == "batchnorm":
        return T.batchnorm_inference_forward(x, params["mean"], params["var"],
                                             params["gamma"], params["beta"], BN_EPS)
    if k == "relu":
        return T.relu(x)
    if k == "gelu":
        return T.gelu(x)
    if k == "layernorm":
        return T.layernorm_forward(x, params["gamma"], params["beta"], LN_EPS)
    if k == "max-pool":
        return T.max_pool2d(x, hp["kernel"], hp["stride"], hp["padding"])
    if k == "global-pool":
        return T.global_average_pool(x)
    if k == "add":
        acc = inputs[0].astype(np.float64)
        for other in inputs[1:]:
            if other.shape != acc.shape:
                raise DimensionError(f"add of shapes {acc.shape} and {other.shape}")
            acc = acc + other
        return acc.astype(np.float32)
    if k == "attention":
        out, qkv, ctx = T.attention_forward(
            x, params["qkv_weight"], params["proj_weight"], hp["head_count"], hp["head_dim"],
            params.get("qkv_bias"), params.get("proj_bias"), return_parts=True)
        if parts is not None:
            parts["qkv"], parts["ctx"] = qkv, ctx
        return out
    if k == "mlp-block":
        hidden = T.dense_forward(x, params["fc1_weight"], params.get("fc1_bias"))
        if parts is not None:
            parts["hidden"] = hidden
        return T.dense_forward(T.gelu(hidden), params["fc2_weight"], params.get("fc2_bias"))
    if k == "patch-embed":
        p = hp["patch"]
        feat = T.conv2d_forward(x, params["kernel"], stride=p, padding=0, bias=params["bias"])
        n, d = feat.shape[:2]
        tokens = feat.reshape(n, d, -1).transpose(0, 2, 1)
        cls = np.broadcast_to(params["cls_token"], (n, 1, d))
        seq = np.concatenate([cls, tokens], axis=1).astype(np.float64)
        return (seq + params["pos_embed"].astype(np.float64)).astype(np.float32)
    raise DimensionError(f"layer {layer.name!r}: unsupported kind {k!r}")


def forward(graph: NetworkGraph, weights: dict, batch, capture=False):
    """Logits [N x class_count] for ``batch``.

    With ``capture=True`` returns ``(logits, activations)`` where activations
    maps every layer name (and ``"input"``) to its output, plus
    ``"<layer>/<part>"`` entries for attention and MLP internals.
    """
    batch = np.asarray(batch, dtype=np.float32)
    if tuple(batch.shape[1:]) != tuple(graph.input_shape):
        raise DimensionError(
            f"batch shape {tuple(batch.shape)} does not match input_shape {tuple(graph.input_shape)}"
        )
    acts = {INPUT: batch}
    consumers_left = {}
    if not capture:
        for l in graph.layers:
            for s in l.inputs:
                consumers_left[s] = consumers_left.get(s, 0) + 1
    for l in graph.layers:
        parts = {} if capture and l.kind in ("attention", "mlp-block") else None
        try:
            out = run_layer(l, weights.get(l.name, {}), [acts[s] for s in l.inputs], parts)
        except DimensionError as exc:
            raise DimensionError(f"layer {l.name!r}: {exc}") from exc
        acts[l.name] = out
        if parts:
            for key, val in parts.items():
                acts[f"{l.name}/{key}"] = val
        if not capture:
            for s in l.inputs:
                consumers_left[s] -= 1
                if consumers_left[s] == 0 and s != graph.output.name:
                    del acts[s]
    logits = acts[graph.output.name]
    return (logits, acts) if capture else logits
