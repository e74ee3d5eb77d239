"""Multiply-accumulate accounting.

One MAC is reported as one FLOP. Bias additions, activations, normalization
and pooling are not counted.
"""

from ..errors import BoundsError
from .graph import NetworkGraph, effective_hyperparams, infer_shapes


def check_sizes(graph: NetworkGraph, sizes) -> None:
    for gid, kept in (sizes or {}).items():
        try:
            g = graph.group(gid)
        except KeyError:
            raise BoundsError(f"unknown group id {gid}") from None
        if not 1 <= int(kept) <= g.original_size:
            raise BoundsError(
                f"group {gid}: kept count {kept} outside [1, {g.original_size}]"
            )


def layer_flops(graph: NetworkGraph, sizes=None) -> dict:
    """MACs per layer at the given kept counts (layers without MACs map to 0)."""
    check_sizes(graph, sizes)
    hps = effective_hyperparams(graph, sizes)
    shapes = infer_shapes(graph, sizes)
    out = {}
    for l in graph.layers:
        hp = hps[l.name]
        src = shapes[l.inputs[0]]
        dst = shapes[l.name]
        k = l.kind
        if k == "conv2d":
            c_in = 1 if hp.get("depthwise") else hp["in_channels"]
            macs = hp["out_channels"] * c_in * hp["kernel"] ** 2 * dst[1] * dst[2]
        elif k == "dense":
            tokens = src[0] if len(src) == 2 else 1
            macs = tokens * hp["out_features"] * hp["in_features"]
        elif k == "classifier":
            macs = hp["out_features"] * hp["in_features"]
        elif k == "patch-embed":
            p = hp["patch"]
            macs = (dst[0] - 1) * hp["embed_dim"] * hp["in_channels"] * p * p
        elif k == "attention":
            t, d = src
            inner = hp["head_count"] * hp["head_dim"]
            macs = (t * d * 3 * inner          # qkv projection
                    + 2 * t * t * inner        # scores and weighted sum
                    + t * inner * d)           # output projection
        elif k == "mlp-block":
            t, d = src
            macs = 2 * t * d * hp["hidden_dim"]
        else:
            macs = 0
        out[l.name] = int(macs)
    return out


def count_flops(graph: NetworkGraph, group_sizes=None) -> int:
    """Total MACs of ``graph`` with each group pruned to ``group_sizes[gid]``."""
    return sum(layer_flops(graph, group_sizes).values())
