"""Architecture description, dependency groups and structural checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DimensionError, FormatError
from ..tensor import output_size

INPUT = "input"

KINDS = (
    "conv2d", "dense", "batchnorm", "relu", "gelu", "layernorm", "attention",
    "mlp-block", "add", "global-pool", "classifier", "patch-embed", "max-pool",
)

OUT, IN = "out-channels", "in-channels"
HEADS, HEAD_DIM, HIDDEN = "heads", "head-dim", "hidden"
AXES = (OUT, IN, HEADS, HEAD_DIM, HIDDEN)

# hyperparameter -> (axis whose group size replaces it when pruning)
WIDTH_PARAMS = {
    "conv2d": {"out_channels": OUT, "in_channels": IN},
    "dense": {"out_features": OUT, "in_features": IN},
    "classifier": {"in_features": IN},
    "batchnorm": {"channels": OUT},
    "attention": {"head_count": HEADS, "head_dim": HEAD_DIM},
    "mlp-block": {"hidden_dim": HIDDEN},
}

REQUIRED = {
    "conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
    "dense": ("in_features", "out_features"),
    "classifier": ("in_features", "out_features"),
    "batchnorm": ("channels",),
    "layernorm": ("dim",),
    "attention": ("embed_dim", "head_count", "head_dim"),
    "mlp-block": ("embed_dim", "hidden_dim"),
    "patch-embed": ("in_channels", "embed_dim", "patch"),
    "max-pool": ("kernel", "stride", "padding"),
}

# Kinds whose output channel axis is inherited unchanged from their (first) input.
PASS_THROUGH = ("batchnorm", "relu", "gelu", "max-pool", "global-pool", "add")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    hyperparams: dict = field(default_factory=dict)
    inputs: tuple = (INPUT,)

    def hp(self, key, default=None):
        return self.hyperparams.get(key, default)

    @property
    def depthwise(self) -> bool:
        return self.kind == "conv2d" and bool(self.hyperparams.get("depthwise", 0))


@dataclass(frozen=True)
class DependencyGroup:
    id: int
    members: tuple  # of (layer name, axis)
    original_size: int


@dataclass(frozen=True)
class NetworkGraph:
    layers: tuple
    groups: tuple
    input_shape: tuple
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {l.name: l for l in self.layers})
        object.__setattr__(self, "_by_id", {g.id: g for g in self.groups})
        axis_map = {}
        for g in self.groups:
            for layer, axis in g.members:
                axis_map.setdefault((layer, axis), g.id)
        object.__setattr__(self, "_axis_group", axis_map)

    def layer(self, name) -> LayerSpec:
        return self._by_name[name]

    def group(self, gid) -> DependencyGroup:
        return self._by_id[gid]

    def axis_group(self, layer, axis):
        """Group id owning ``(layer, axis)``, or None when that axis is not prunable."""
        return self._axis_group.get((layer, axis))

    @property
    def output(self) -> LayerSpec:
        return self.layers[-1]

    def consumers(self, name):
        return [l for l in self.layers if name in l.inputs]

    def full_sizes(self) -> dict:
        return {g.id: g.original_size for g in self.groups}


# ---------------------------------------------------------------- serialization

def graph_to_dict(graph: NetworkGraph) -> dict:
    return {
        "layers": [
            {"name": l.name, "kind": l.kind, "hyperparams": dict(l.hyperparams),
             "inputs": list(l.inputs)}
            for l in graph.layers
        ],
        "groups": [
            {"id": g.id, "members": [list(m) for m in g.members],
             "original_size": g.original_size}
            for g in graph.groups
        ],
        "input_shape": list(graph.input_shape),
        "class_count": graph.class_count,
    }


def graph_from_dict(d: dict) -> NetworkGraph:
    try:
        layers = tuple(
            LayerSpec(str(l["name"]), str(l["kind"]), dict(l.get("hyperparams", {})),
                      tuple(l.get("inputs", [INPUT])))
            for l in d["layers"]
        )
        groups = tuple(
            DependencyGroup(int(g["id"]), tuple((str(m[0]), str(m[1])) for m in g["members"]),
                            int(g["original_size"]))
            for g in d.get("groups", [])
        )
        return NetworkGraph(layers, groups, tuple(int(x) for x in d["input_shape"]),
                            int(d["class_count"]))
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise FormatError(f"malformed model spec: {exc!r}") from exc


def load_graph(path) -> NetworkGraph:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"model spec is not valid JSON: {exc.msg}", exc.pos) from exc
    return graph_from_dict(d)


def save_graph(graph: NetworkGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph), indent=1) + "\n")


# ---------------------------------------------------------------- widths and shapes

def effective_hyperparams(graph: NetworkGraph, sizes=None) -> dict:
    """Per-layer hyperparameters with channel widths replaced by kept counts.

    ``sizes`` maps group id to kept count; missing groups stay at full width.
    """
    sizes = sizes or {}
    out = {}
    for l in graph.layers:
        hp = dict(l.hyperparams)
        for key, axis in WIDTH_PARAMS.get(l.kind, {}).items():
            gid = graph.axis_group(l.name, axis)
            if gid is not None and gid in sizes:
                hp[key] = int(sizes[gid])
        out[l.name] = hp
    return out


def infer_shapes(graph: NetworkGraph, sizes=None) -> dict:
    """Output shape (batch axis omitted) of every layer, evaluated at ``sizes``."""
    hps = effective_hyperparams(graph, sizes)
    shapes = {INPUT: tuple(graph.input_shape)}
    for l in graph.layers:
        hp = hps[l.name]
        try:
            src = shapes[l.inputs[0]]
        except KeyError:
            raise DimensionError(f"layer {l.name!r}: unknown input {l.inputs[0]!r}") from None
        k = l.kind
        if k == "conv2d":
            _, h, w = src
            kk, s, p = hp["kernel"], hp["stride"], hp["padding"]
            shapes[l.name] = (hp["out_channels"], output_size(h, kk, s, p), output_size(w, kk, s, p))
        elif k == "max-pool":
            c, h, w = src
            kk, s, p = hp["kernel"], hp["stride"], hp["padding"]
            shapes[l.name] = (c, output_size(h, kk, s, p), output_size(w, kk, s, p))
        elif k == "global-pool":
            shapes[l.name] = (src[0],)
        elif k in ("dense", "classifier"):
            if k == "classifier" and len(src) == 2:
                shapes[l.name] = (hp["out_features"],)
            else:
                shapes[l.name] = src[:-1] + (hp["out_features"],)
        elif k == "batchnorm":
            shapes[l.name] = (hp["channels"],) + tuple(src[1:])
        elif k == "patch-embed":
            _, h, w = src
            p = hp["patch"]
            shapes[l.name] = ((h // p) * (w // p) + 1, hp["embed_dim"])
        elif k in ("attention", "mlp-block"):
            shapes[l.name] = src[:-1] + (hp["embed_dim"],)
        else:  # relu, gelu, layernorm, add
            shapes[l.name] = src
    return shapes


def channel_source(graph: NetworkGraph, name):
    """Layer whose out-channel axis defines the channel axis of ``name``'s output.

    Returns None for features that are not channel-prunable (network input,
    token embeddings).
    """
    while True:
        if name == INPUT:
            return None
        l = graph.layer(name)
        if l.kind in ("conv2d", "dense"):
            return l.name
        if l.kind in PASS_THROUGH:
            name = l.inputs[0]
            continue
        return None


def prunable_axes(graph: NetworkGraph) -> list:
    """All (layer, axis) pairs that must belong to a dependency group."""
    axes = []
    for l in graph.layers:
        fed = channel_source(graph, l.inputs[0]) if l.inputs else None
        if l.kind == "conv2d":
            if fed is not None:
                axes.append((l.name, IN))
            axes.append((l.name, OUT))
        elif l.kind == "dense":
            if fed is not None:
                axes.append((l.name, IN))
            axes.append((l.name, OUT))
        elif l.kind == "classifier":
            if fed is not None:
                axes.append((l.name, IN))
        elif l.kind == "batchnorm":
            if fed is not None:
                axes.append((l.name, OUT))
        elif l.kind == "attention":
            axes += [(l.name, HEADS), (l.name, HEAD_DIM)]
        elif l.kind == "mlp-block":
            axes.append((l.name, HIDDEN))
    return axes


def axis_width(layer: LayerSpec, axis):
    hp = layer.hyperparams
    table = {
        ("conv2d", OUT): "out_channels", ("conv2d", IN): "in_channels",
        ("dense", OUT): "out_features", ("dense", IN): "in_features",
        ("classifier", IN): "in_features", ("batchnorm", OUT): "channels",
        ("attention", HEADS): "head_count", ("attention", HEAD_DIM): "head_dim",
        ("mlp-block", HIDDEN): "hidden_dim",
    }
    key = table.get((layer.kind, axis))
    return None if key is None else hp.get(key)


# ---------------------------------------------------------------- validation

def expected_weight_shapes(layer: LayerSpec, hp: dict, in_shape) -> dict:
    k = layer.kind
    if k == "conv2d":
        c_in = 1 if hp.get("depthwise") else hp["in_channels"]
        shapes = {"kernel": (hp["out_channels"], c_in, hp["kernel"], hp["kernel"])}
        if hp.get("bias"):
            shapes["bias"] = (hp["out_channels"],)
        return shapes
    if k in ("dense", "classifier"):
        shapes = {"weight": (hp["out_features"], hp["in_features"])}
        if hp.get("bias", 1 if k == "classifier" else 0):
            shapes["bias"] = (hp["out_features"],)
        return shapes
    if k == "batchnorm":
        c = hp["channels"]
        return {"gamma": (c,), "beta": (c,), "mean": (c,), "var": (c,)}
    if k == "layernorm":
        return {"gamma": (hp["dim"],), "beta": (hp["dim"],)}
    if k == "attention":
        inner = hp["head_count"] * hp["head_dim"]
        d = hp["embed_dim"]
        return {"qkv_weight": (3 * inner, d), "qkv_bias": (3 * inner,),
                "proj_weight": (d, inner), "proj_bias": (d,)}
    if k == "mlp-block":
        d, h = hp["embed_dim"], hp["hidden_dim"]
        return {"fc1_weight": (h, d), "fc1_bias": (h,), "fc2_weight": (d, h), "fc2_bias": (d,)}
    if k == "patch-embed":
        d, p, c = hp["embed_dim"], hp["patch"], hp["in_channels"]
        tokens = (in_shape[1] // p) * (in_shape[2] // p) + 1
        return {"kernel": (d, c, p, p), "bias": (d,), "cls_token": (d,),
                "pos_embed": (tokens, d)}
    return {}


def validate(graph: NetworkGraph, weights=None) -> list:
    """Return a list of human-readable diagnostics; empty means well formed."""
    diags = []
    seen = {INPUT}
    for l in graph.layers:
        if l.name in seen:
            diags.append(f"layer {l.name!r}: duplicate name")
        if l.kind not in KINDS:
            diags.append(f"layer {l.name!r}: unknown kind {l.kind!r}")
        if not l.inputs:
            diags.append(f"layer {l.name!r}: no inputs")
        for src in l.inputs:
            if src not in seen:
                diags.append(f"layer {l.name!r}: input {src!r} is not defined earlier "
                             "(graph must be acyclic and topologically ordered)")
        missing = [h for h in REQUIRED.get(l.kind, ()) if h not in l.hyperparams]
        if missing:
            diags.append(f"layer {l.name!r}: missing hyperparams {missing}")
        if l.kind == "add" and len(l.inputs) < 2:
            diags.append(f"add layer {l.name!r}: needs at least two inputs")
        seen.add(l.name)
    if diags:
        return diags

    consumed = {s for l in graph.layers for s in l.inputs}
    sinks = [l.name for l in graph.layers if l.name not in consumed]
    if sinks != [graph.output.name]:
        diags.append(f"graph must have a single output layer, found {sinks}")
    if graph.output.kind == "classifier" and graph.output.hp("out_features") != graph.class_count:
        diags.append(f"classifier {graph.output.name!r}: out_features "
                     f"{graph.output.hp('out_features')} != class_count {graph.class_count}")

    try:
        shapes = infer_shapes(graph)
    except (DimensionError, KeyError, TypeError) as exc:
        return diags + [f"shape inference failed: {exc}"]

    for l in graph.layers:
        src_shape = shapes[l.inputs[0]]
        if l.kind == "add":
            ins = [shapes[s] for s in l.inputs]
            if any(s != ins[0] for s in ins):
                diags.append(f"add layer {l.name!r}: input shapes differ {ins}")
        elif l.kind == "conv2d":
            if len(src_shape) != 3 or src_shape[0] != l.hp("in_channels"):
                diags.append(f"conv2d {l.name!r}: in_channels {l.hp('in_channels')} "
                             f"does not match input shape {src_shape}")
            if l.depthwise and l.hp("in_channels") != l.hp("out_channels"):
                diags.append(f"depthwise conv2d {l.name!r}: in/out channels differ")
            if min(shapes[l.name][1:]) < 1:
                diags.append(f"conv2d {l.name!r}: empty output {shapes[l.name]}")
        elif l.kind in ("dense", "classifier"):
            if len(src_shape) == 3 or src_shape[-1] != l.hp("in_features"):
                diags.append(f"{l.kind} {l.name!r}: in_features {l.hp('in_features')} "
                             f"does not match input shape {src_shape}")
        elif l.kind == "batchnorm":
            if src_shape[0] != l.hp("channels"):
                diags.append(f"batchnorm {l.name!r}: channels {l.hp('channels')} "
                             f"does not match input shape {src_shape}")
        elif l.kind in ("layernorm", "attention", "mlp-block"):
            key = "dim" if l.kind == "layernorm" else "embed_dim"
            if len(src_shape) != 2 or src_shape[-1] != l.hp(key):
                diags.append(f"{l.kind} {l.name!r}: {key} {l.hp(key)} does not match "
                             f"input shape {src_shape}")

    diags += _validate_groups(graph)

    if weights is not None:
        for l in graph.layers:
            expected = expected_weight_shapes(l, l.hyperparams, shapes[l.inputs[0]])
            stored = weights.get(l.name, {})
            for pname, shape in expected.items():
                if pname not in stored:
                    diags.append(f"layer {l.name!r}: missing weight {pname!r}")
                elif tuple(stored[pname].shape) != tuple(shape):
                    diags.append(f"layer {l.name!r}: weight {pname!r} has shape "
                                 f"{tuple(stored[pname].shape)}, expected {tuple(shape)}")
    return diags


def _validate_groups(graph: NetworkGraph) -> list:
    diags = []
    names = {l.name for l in graph.layers}
    owner = {}
    ids = set()
    for g in graph.groups:
        if g.id in ids:
            diags.append(f"group {g.id}: duplicate id")
        ids.add(g.id)
        if g.original_size < 1:
            diags.append(f"group {g.id}: original_size must be positive")
        for layer, axis in g.members:
            if layer not in names:
                diags.append(f"group {g.id}: unknown layer {layer!r}")
                continue
            if axis not in AXES:
                diags.append(f"group {g.id}: unknown axis {axis!r} on {layer!r}")
                continue
            if (layer, axis) in owner:
                diags.append(f"group {g.id}: axis ({layer!r}, {axis}) already in group "
                             f"{owner[(layer, axis)]}")
            owner[(layer, axis)] = g.id
            width = axis_width(graph.layer(layer), axis)
            if width is None:
                diags.append(f"group {g.id}: layer {layer!r} has no {axis} axis")
            elif width != g.original_size:
                diags.append(f"group {g.id}: member ({layer!r}, {axis}) has width {width}, "
                             f"group original_size {g.original_size}")
    required = prunable_axes(graph)
    for ax in required:
        if ax not in owner:
            diags.append(f"layer {ax[0]!r}: prunable axis {ax[1]} belongs to no group")
    req = set(required)
    for ax, gid in owner.items():
        if ax not in req and axis_width(graph.layer(ax[0]), ax[1]) is not None:
            diags.append(f"group {gid}: axis ({ax[0]!r}, {ax[1]}) is not prunable")
    if diags:
        return diags

    def feature_group(name):
        src = channel_source(graph, name)
        return None if src is None else graph.axis_group(src, OUT)

    for l in graph.layers:
        if l.kind == "add":
            gs = {feature_group(s) for s in l.inputs}
            if len(gs) != 1:
                diags.append(f"add layer {l.name!r}: producers belong to different "
                             f"out-channel groups {sorted(gs, key=str)}")
        fed = feature_group(l.inputs[0])
        if l.kind in ("conv2d", "dense", "classifier") and fed is not None:
            if graph.axis_group(l.name, IN) != fed:
                diags.append(f"{l.kind} {l.name!r}: in-channel group "
                             f"{graph.axis_group(l.name, IN)} differs from producer group {fed}")
        if l.kind == "batchnorm" and fed is not None and graph.axis_group(l.name, OUT) != fed:
            diags.append(f"batchnorm {l.name!r}: group {graph.axis_group(l.name, OUT)} "
                         f"differs from producer group {fed}")
        if l.depthwise and graph.axis_group(l.name, IN) != graph.axis_group(l.name, OUT):
            diags.append(f"depthwise conv2d {l.name!r}: in and out axes must share a group")
    return diags
