"""Built-in architecture generators and weight initialisation.

``resnet50``, ``mobilenet_v1`` and ``deit_base`` produce the full-scale
graphs used for FLOPs accounting; every generator is parameterised so the
same topology can be instantiated at toy scale for inference tests.
"""

import numpy as np

from .graph import HEAD_DIM, HEADS, HIDDEN, IN, INPUT, OUT, DependencyGroup, LayerSpec, NetworkGraph, infer_shapes


class _Builder:
    def __init__(self):
        self.layers = []
        self.groups = {}
        self.sizes = {}

    def group(self, size):
        gid = len(self.groups)
        self.groups[gid] = []
        self.sizes[gid] = size
        return gid

    def add(self, name, kind, inputs, **hp):
        if isinstance(inputs, str):
            inputs = (inputs,)
        self.layers.append(LayerSpec(name, kind, hp, tuple(inputs)))
        return name

    def member(self, gid, layer, axis):
        self.groups[gid].append((layer, axis))

    def conv_bn(self, name, src, in_group, c_in, c_out, k, stride, out_group=None,
                depthwise=False, relu=True):
        """conv -> batchnorm [-> relu]; returns (output name, out group)."""
        if depthwise:
            out_group = in_group
        elif out_group is None:
            out_group = self.group(c_out)
        self.add(name, "conv2d", src, in_channels=c_in, out_channels=c_out, kernel=k,
                 stride=stride, padding=k // 2, depthwise=int(depthwise))
        if in_group is not None:
            self.member(in_group, name, IN)
        self.member(out_group, name, OUT)
        bn = self.add(f"{name}.bn", "batchnorm", name, channels=c_out)
        self.member(out_group, bn, OUT)
        out = bn
        if relu:
            out = self.add(f"{name}.relu", "relu", bn)
        return out, out_group

    def head(self, src, in_group, features, classes, pool=True):
        if pool:
            src = self.add("pool", "global-pool", src)
        self.add("fc", "classifier", src, in_features=features, out_features=classes, bias=1)
        if in_group is not None:
            self.member(in_group, "fc", IN)

    def build(self, input_shape, classes):
        groups = tuple(DependencyGroup(gid, tuple(m), self.sizes[gid])
                       for gid, m in self.groups.items())
        return NetworkGraph(tuple(self.layers), groups, tuple(input_shape), classes)


def resnet50(input_size=224, width=64, depths=(3, 4, 6, 3), classes=1000, in_channels=3):
    """Bottleneck ResNet (v1.5: stride on the 3x3 conv)."""
    b = _Builder()
    x, g = b.conv_bn("conv1", INPUT, None, in_channels, width, 7, 2)
    x = b.add("maxpool", "max-pool", x, kernel=3, stride=2, padding=1)
    c_in = width
    for si, depth in enumerate(depths):
        planes = width * 2 ** si
        c_out = planes * 4
        for bi in range(depth):
            p = f"layer{si + 1}.{bi}"
            stride = 2 if (bi == 0 and si > 0) else 1
            h, _ = b.conv_bn(f"{p}.conv1", x, g, c_in, planes, 1, 1)
            h, _ = b.conv_bn(f"{p}.conv2", h, _group_of(b, f"{p}.conv1"), planes, planes, 3, stride)
            if bi == 0:
                res_group = b.group(c_out)
                short, _ = b.conv_bn(f"{p}.downsample", x, g, c_in, c_out, 1, stride,
                                     out_group=res_group, relu=False)
            else:
                short = x
            h, _ = b.conv_bn(f"{p}.conv3", h, _group_of(b, f"{p}.conv2"), planes, c_out, 1, 1,
                             out_group=res_group, relu=False)
            s = b.add(f"{p}.add", "add", (h, short))
            x = b.add(f"{p}.relu", "relu", s)
            g = res_group
            c_in = c_out
    b.head(x, g, c_in, classes)
    return b.build((in_channels, input_size, input_size), classes)


def _group_of(b, layer):
    for gid, members in b.groups.items():
        if (layer, OUT) in members:
            return gid
    raise KeyError(layer)


def mobilenet_v1(input_size=224, width_mult=1.0, classes=1000, in_channels=3):
    cfg = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2)] + [(512, 1)] * 5 + \
          [(1024, 2), (1024, 1)]

    def w(c):
        return max(1, int(c * width_mult))

    b = _Builder()
    c = w(32)
    x, g = b.conv_bn("conv0", INPUT, None, in_channels, c, 3, 2)
    for i, (c_out, stride) in enumerate(cfg, start=1):
        x, g = b.conv_bn(f"block{i}.dw", x, g, c, c, 3, stride, depthwise=True)
        x, g = b.conv_bn(f"block{i}.pw", x, g, c, w(c_out), 1, 1)
        c = w(c_out)
    b.head(x, g, c, classes)
    return b.build((in_channels, input_size, input_size), classes)


def vision_transformer(image_size=224, patch=16, embed_dim=768, depth=12, heads=12,
                       head_dim=64, hidden=3072, classes=1000, in_channels=3):
    b = _Builder()
    x = b.add("patch_embed", "patch-embed", INPUT, in_channels=in_channels,
              embed_dim=embed_dim, patch=patch)
    for i in range(depth):
        p = f"blocks.{i}"
        n1 = b.add(f"{p}.norm1", "layernorm", x, dim=embed_dim)
        attn = b.add(f"{p}.attn", "attention", n1, embed_dim=embed_dim, head_count=heads,
                     head_dim=head_dim)
        b.member(b.group(heads), attn, HEADS)
        b.member(b.group(head_dim), attn, HEAD_DIM)
        x = b.add(f"{p}.add1", "add", (x, attn))
        n2 = b.add(f"{p}.norm2", "layernorm", x, dim=embed_dim)
        mlp = b.add(f"{p}.mlp", "mlp-block", n2, embed_dim=embed_dim, hidden_dim=hidden)
        b.member(b.group(hidden), mlp, HIDDEN)
        x = b.add(f"{p}.add2", "add", (x, mlp))
    x = b.add("norm", "layernorm", x, dim=embed_dim)
    b.head(x, None, embed_dim, classes, pool=False)
    return b.build((in_channels, image_size, image_size), classes)


def deit_base(classes=1000):
    return vision_transformer(classes=classes)


def toy_cnn(input_shape=(3, 8, 8), widths=(8, 8, 16, 16), strides=(1, 1, 2, 1), classes=4):
    """Four residual-capable blocks (conv-bn-relu-conv-bn [+skip]-relu) and a classifier.

    A block whose input and output widths match and whose stride is 1 gets an
    identity shortcut, so its output shares a dependency group with its input.
    """
    b = _Builder()
    x, g, c_in = INPUT, None, input_shape[0]
    for i, (c, s) in enumerate(zip(widths, strides), start=1):
        p = f"block{i}"
        h, _ = b.conv_bn(f"{p}.conv1", x, g, c_in, c, 3, s)
        residual = g is not None and c == c_in and s == 1
        out_group = g if residual else None
        h, hg = b.conv_bn(f"{p}.conv2", h, _group_of(b, f"{p}.conv1"), c, c, 3, 1,
                          out_group=out_group, relu=False)
        if residual:
            h = b.add(f"{p}.add", "add", (h, x))
        x = b.add(f"{p}.relu", "relu", h)
        g, c_in = hg, c
    b.head(x, g, c_in, classes)
    return b.build(input_shape, classes)


def toy_transformer(input_shape=(3, 8, 8), patch=2, embed_dim=64, depth=4, heads=4,
                    hidden=128, classes=4):
    return vision_transformer(image_size=input_shape[1], patch=patch, embed_dim=embed_dim,
                              depth=depth, heads=heads, head_dim=embed_dim // heads,
                              hidden=hidden, classes=classes, in_channels=input_shape[0])


BUILTIN = {
    "resnet50": resnet50,
    "mobilenet_v1": mobilenet_v1,
    "deit_base": deit_base,
    "toy_cnn": toy_cnn,
    "toy_transformer": toy_transformer,
}


def builtin(name, **kwargs) -> NetworkGraph:
    key = name.replace("-", "_").lower()
    if key not in BUILTIN:
        raise KeyError(f"unknown built-in model {name!r}; choose from {sorted(BUILTIN)}")
    return BUILTIN[key](**kwargs)


def init_weights(graph: NetworkGraph, rng: np.random.Generator) -> dict:
    """Random weights with realistic scales (He-normal convs, perturbed norms)."""
    shapes = infer_shapes(graph)
    store = {}
    f32 = np.float32

    def normal(shape, std):
        return (rng.standard_normal(shape) * std).astype(f32)

    for l in graph.layers:
        hp = l.hyperparams
        k = l.kind
        if k == "conv2d":
            c_in = 1 if hp.get("depthwise") else hp["in_channels"]
            fan_in = c_in * hp["kernel"] ** 2
            p = {"kernel": normal((hp["out_channels"], c_in, hp["kernel"], hp["kernel"]),
                                  np.sqrt(2.0 / fan_in))}
            if hp.get("bias"):
                p["bias"] = normal((hp["out_channels"],), 0.05)
        elif k in ("dense", "classifier"):
            p = {"weight": normal((hp["out_features"], hp["in_features"]),
                                  np.sqrt(1.0 / hp["in_features"]))}
            if hp.get("bias", 1 if k == "classifier" else 0):
                p["bias"] = np.zeros(hp["out_features"], f32)
        elif k == "batchnorm":
            c = hp["channels"]
            p = {"gamma": rng.uniform(0.5, 1.5, c).astype(f32), "beta": normal((c,), 0.1),
                 "mean": normal((c,), 0.1), "var": rng.uniform(0.5, 1.5, c).astype(f32)}
        elif k == "layernorm":
            d = hp["dim"]
            p = {"gamma": (1.0 + normal((d,), 0.1)).astype(f32), "beta": normal((d,), 0.05)}
        elif k == "attention":
            d, inner = hp["embed_dim"], hp["head_count"] * hp["head_dim"]
            p = {"qkv_weight": normal((3 * inner, d), np.sqrt(1.0 / d)),
                 "qkv_bias": normal((3 * inner,), 0.02),
                 "proj_weight": normal((d, inner), np.sqrt(1.0 / inner)),
                 "proj_bias": normal((d,), 0.02)}
        elif k == "mlp-block":
            d, h = hp["embed_dim"], hp["hidden_dim"]
            p = {"fc1_weight": normal((h, d), np.sqrt(1.0 / d)), "fc1_bias": normal((h,), 0.02),
                 "fc2_weight": normal((d, h), np.sqrt(1.0 / h)), "fc2_bias": normal((d,), 0.02)}
        elif k == "patch-embed":
            d, c, pt = hp["embed_dim"], hp["in_channels"], hp["patch"]
            tokens = shapes[l.name][0]
            p = {"kernel": normal((d, c, pt, pt), np.sqrt(1.0 / (c * pt * pt))),
                 "bias": normal((d,), 0.02), "cls_token": normal((d,), 0.5),
                 "pos_embed": normal((tokens, d), 0.1)}
        else:
            continue
        store[l.name] = p
    return store
