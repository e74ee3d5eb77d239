"""Closed-form weight reconstruction of pruned layers.

Layers are revisited in topological order. Each layer's design matrix comes
from the partially reconstructed pruned network (sampled patches or tokens of
its input) and its targets are the original network's outputs at the same
positions, restricted to the kept output channels. The pruned kernel is the
least-squares fit between the two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .netgraph.forward import forward, run_layer
from .netgraph.graph import HEAD_DIM, HEADS, HIDDEN, IN, INPUT, OUT, NetworkGraph
from .errors import BoundsError
from .prunespace import Subnetwork, _head_cols, _head_rows
from .tensor import conv_windows, gelu, least_squares_solve, output_size

DEFAULT_PATCHES = 10
DEFAULT_TOKENS = 20


@dataclass
class CalibrationBatch:
    inputs: np.ndarray
    d: int = DEFAULT_PATCHES        # spatial positions per image for conv layers
    tokens: int = DEFAULT_TOKENS    # tokens per sample (cls always included)

    def __post_init__(self):
        if self.d < 1 or self.tokens < 1:
            raise BoundsError("patch and token counts must be >= 1")
        self.inputs = np.asarray(self.inputs, dtype=np.float32)


@dataclass
class LayerRecord:
    layer: str
    rows: int
    cols: int
    residual_before: float
    residual_after: float
    ridge_used: bool


@dataclass
class ReconstructionReport:
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def violations(self, tol=1e-6) -> list:
        return [r.layer for r in self.records if r.residual_after > r.residual_before + tol]


# ---------------------------------------------------------------- sampling

def sample_positions(n, positions, d, rng: np.random.Generator) -> np.ndarray:
    """``d`` distinct flat indices in ``range(positions)`` per image, shape [n, d]."""
    if d > positions:
        raise BoundsError(f"cannot sample {d} patches from {positions} positions")
    if d == positions:
        return np.tile(np.arange(positions), (n, 1))
    return np.argsort(rng.random((n, positions)), axis=1)[:, :d]


def sample_tokens(n, t, d, rng: np.random.Generator) -> np.ndarray:
    """Token indices [n, min(d, t)]; column 0 is always the cls token (index 0)."""
    d = min(d, t)
    if d == t:
        return np.tile(np.arange(t), (n, 1))
    rest = 1 + np.argsort(rng.random((n, t - 1)), axis=1)[:, :d - 1]
    return np.concatenate([np.zeros((n, 1), dtype=rest.dtype), rest], axis=1)


def gather_patches(feature, k1, k2, stride, padding, pos) -> np.ndarray:
    """im2col rows of ``feature`` at flat output positions ``pos`` [n, d]."""
    win = conv_windows(feature, k1, k2, stride, padding)
    n, c, ho, wo = win.shape[:4]
    oy, ox = np.divmod(pos, wo)
    rows = win[np.arange(n)[:, None], :, oy, ox]          # [n, d, c, k1, k2]
    return rows.reshape(n * pos.shape[1], c * k1 * k2)


def gather_outputs(out, pos) -> np.ndarray:
    """Output channels at flat positions: [N, C, H, W] -> [(N*d) x C]."""
    n, c = out.shape[:2]
    flat = out.reshape(n, c, -1)
    return flat[np.arange(n)[:, None], :, pos].reshape(n * pos.shape[1], c)


def sample_patches(feature, kernel, stride, padding, d, rng):
    """Sample ``d`` receptive fields per image; returns ``(X, positions)``.

    ``X`` is [(N*d) x (C*K1*K2)]; ``positions`` [N, d] are flat output indices
    to be reused when gathering targets.
    """
    k1, k2 = kernel
    n, _, h, w = feature.shape
    ho, wo = output_size(h, k1, stride, padding), output_size(w, k2, stride, padding)
    pos = sample_positions(n, ho * wo, d, rng)
    return gather_patches(feature, k1, k2, stride, padding, pos), pos


# ---------------------------------------------------------------- single systems

def _residual(x, w, b, y):
    pred = x.astype(np.float64) @ w.astype(np.float64).T
    if b is not None:
        pred += b.astype(np.float64)
    return float(np.linalg.norm(pred - y.astype(np.float64)))


def solve_system(name, x, y, w_init, b_init=None):
    """Fit ``y ~ x @ w.T (+ b)`` starting from the sliced ``w_init`` [out x in].

    Returns ``(w, b, record)``; never returns a fit worse than the initial one.
    """
    design = x
    if b_init is not None:
        design = np.concatenate([x, np.ones((x.shape[0], 1), x.dtype)], axis=1)
    sol, ridge = least_squares_solve(design, y, return_info=True)
    w_new = np.ascontiguousarray(sol[:x.shape[1]].T)
    b_new = sol[x.shape[1]].copy() if b_init is not None else None
    before = _residual(x, w_init, b_init, y)
    after = _residual(x, w_new, b_new, y)
    if after > before:
        w_new, b_new, after = w_init, b_init, before
    rec = LayerRecord(name, int(design.shape[0]), int(design.shape[1]), before, after, ridge)
    return w_new.astype(np.float32), (None if b_new is None else b_new.astype(np.float32)), rec


def reconstruct_layer(x_full, w, kept_in, kernel_taps=None):
    """Refit ``w`` after dropping input channels.

    ``x_full`` holds patches over all input channels [rows x (C_in*taps)]; the
    target is ``x_full @ w_flat.T``. Returns the kernel restricted to
    ``kept_in`` with shape [C_out, |kept_in|, ...] (trailing kernel dims kept).
    """
    w = np.asarray(w)
    c_out, c_in = w.shape[:2]
    taps = int(np.prod(w.shape[2:])) if kernel_taps is None else kernel_taps
    w_flat = w.reshape(c_out, c_in * taps)
    y = (np.asarray(x_full, np.float64) @ w_flat.T.astype(np.float64)).astype(np.float32)
    cols = (np.asarray(kept_in)[:, None] * taps + np.arange(taps)).ravel()
    x_kept = np.asarray(x_full)[:, cols]
    sol = least_squares_solve(x_kept, y)
    return np.ascontiguousarray(sol.T).reshape((c_out, len(kept_in)) + w.shape[2:])


# ---------------------------------------------------------------- whole network

def _kept(sub: Subnetwork, graph, layer, axis, full):
    gid = graph.axis_group(layer, axis)
    if gid is None or gid not in sub.selection:
        return np.arange(full)
    return np.asarray(sub.selection[gid])


def _is_pruned(sub: Subnetwork, graph: NetworkGraph, layer, axes):
    for axis in axes:
        gid = graph.axis_group(layer, axis)
        if gid is not None and gid in sub.selection and \
                len(sub.selection[gid]) < graph.group(gid).original_size:
            return True
    return False


def _sample_rows(x, idx):
    """Pick tokens ``idx`` [n, d] from ``x`` [n, t, c] -> [(n*d) x c]."""
    n = x.shape[0]
    return x[np.arange(n)[:, None], idx].reshape(n * idx.shape[1], x.shape[-1])


def original_activations(graph: NetworkGraph, weights: dict, calib: CalibrationBatch) -> dict:
    return forward(graph, weights, calib.inputs, capture=True)[1]


def reconstruct_network(sub: Subnetwork, graph: NetworkGraph, weights: dict,
                        calib: CalibrationBatch, rng: np.random.Generator,
                        original_acts: dict = None):
    """Reconstruct every pruned layer of ``sub``; returns ``(weights, report)``.

    ``original_acts`` may carry a cached ``forward(..., capture=True)`` of the
    unpruned network on ``calib.inputs``.
    """
    acts_o = original_acts if original_acts is not None else \
        original_activations(graph, weights, calib)
    new = {k: dict(v) for k, v in sub.weights.items()}
    report = ReconstructionReport()
    acts = {INPUT: calib.inputs}
    for l in sub.graph.layers:
        orig = graph.layer(l.name)
        p = new.get(l.name, {})
        xs = [acts[s] for s in l.inputs]
        x = xs[0]
        if l.kind == "conv2d" and _is_pruned(sub, graph, l.name, (IN, OUT)):
            _reconstruct_conv(sub, graph, orig, l, p, x, acts_o[l.name], calib, rng, report)
        elif l.kind in ("dense", "classifier") and _is_pruned(sub, graph, l.name, (IN, OUT)):
            out_kept = _kept(sub, graph, l.name, OUT, orig.hp("out_features"))
            target = acts_o[l.name]
            if l.kind == "classifier" or x.ndim == 2:
                xr = x[:, 0] if x.ndim == 3 else x
                yr = target
            else:
                idx = sample_tokens(x.shape[0], x.shape[1], calib.tokens, rng)
                xr, yr = _sample_rows(x, idx), _sample_rows(target, idx)
            if l.kind == "dense":
                yr = yr[:, out_kept]
            w, b, rec = solve_system(l.name, xr, yr, p["weight"], p.get("bias"))
            p["weight"] = w
            if b is not None:
                p["bias"] = b
            report.records.append(rec)
        elif l.kind == "attention" and _is_pruned(sub, graph, l.name, (HEADS, HEAD_DIM)):
            _reconstruct_attention(sub, graph, orig, l, p, x, acts_o, calib, rng, report)
        elif l.kind == "mlp-block" and _is_pruned(sub, graph, l.name, (HIDDEN,)):
            _reconstruct_mlp(sub, graph, l, p, x, acts_o, calib, rng, report)
        acts[l.name] = run_layer(l, p, xs)
    return new, report


def _reconstruct_conv(sub, graph, orig, l, p, x, target, calib, rng, report):
    hp = l.hyperparams
    k, s, pad = hp["kernel"], hp["stride"], hp["padding"]
    out_kept = _kept(sub, graph, l.name, OUT, orig.hp("out_channels"))
    n = x.shape[0]
    ho, wo = target.shape[2:]
    pos = sample_positions(n, ho * wo, min(calib.d, ho * wo), rng)
    y = gather_outputs(target, pos)[:, out_kept]
    kernel = p["kernel"]
    bias = p.get("bias")
    if l.depthwise:
        win = conv_windows(x, k, k, s, pad)
        oy, ox = np.divmod(pos, wo)
        patches = win[np.arange(n)[:, None], :, oy, ox]      # [n, d, c, k, k]
        patches = patches.reshape(-1, patches.shape[2], k * k)
        new_kernel = kernel.copy()
        new_bias = None if bias is None else bias.copy()
        sq_before = sq_after = 0.0
        ridge_any = False
        for c in range(kernel.shape[0]):
            b0 = None if bias is None else bias[c:c + 1]
            w, b, rec = solve_system(l.name, patches[:, c], y[:, c:c + 1],
                                     kernel[c].reshape(1, -1), b0)
            new_kernel[c] = w.reshape(1, k, k)
            if b is not None:
                new_bias[c] = b[0]
            sq_before += rec.residual_before ** 2
            sq_after += rec.residual_after ** 2
            ridge_any |= rec.ridge_used
        p["kernel"] = new_kernel
        if new_bias is not None:
            p["bias"] = new_bias
        report.records.append(LayerRecord(l.name, int(patches.shape[0]), k * k,
                                          float(np.sqrt(sq_before)), float(np.sqrt(sq_after)),
                                          ridge_any))
        return
    xr = gather_patches(x, k, k, s, pad, pos)
    w, b, rec = solve_system(l.name, xr, y, kernel.reshape(kernel.shape[0], -1), bias)
    p["kernel"] = w.reshape(kernel.shape)
    if b is not None:
        p["bias"] = b
    report.records.append(rec)


def _reconstruct_attention(sub, graph, orig, l, p, x, acts_o, calib, rng, report):
    heads, dh = orig.hp("head_count"), orig.hp("head_dim")
    kh = _kept(sub, graph, l.name, HEADS, heads)
    kd = _kept(sub, graph, l.name, HEAD_DIM, dh)
    idx = sample_tokens(x.shape[0], x.shape[1], calib.tokens, rng)
    xr = _sample_rows(x, idx)
    y = _sample_rows(acts_o[f"{l.name}/qkv"], idx)[:, _head_rows(kh, kd, heads, dh)]
    w, b, rec = solve_system(f"{l.name}.qkv", xr, y, p["qkv_weight"], p["qkv_bias"])
    p["qkv_weight"], p["qkv_bias"] = w, b
    report.records.append(rec)
    parts = {}
    run_layer(l, p, [x], parts)
    ctx = _sample_rows(parts["ctx"], idx)
    y2 = _sample_rows(acts_o[l.name], idx)
    w, b, rec = solve_system(f"{l.name}.proj", ctx, y2, p["proj_weight"], p["proj_bias"])
    p["proj_weight"], p["proj_bias"] = w, b
    report.records.append(rec)


def _reconstruct_mlp(sub, graph, l, p, x, acts_o, calib, rng, report):
    kept = np.asarray(sub.selection[graph.axis_group(l.name, HIDDEN)])
    idx = sample_tokens(x.shape[0], x.shape[1], calib.tokens, rng)
    xr = _sample_rows(x, idx)
    y = _sample_rows(acts_o[f"{l.name}/hidden"], idx)[:, kept]
    w, b, rec = solve_system(f"{l.name}.fc1", xr, y, p["fc1_weight"], p["fc1_bias"])
    p["fc1_weight"], p["fc1_bias"] = w, b
    report.records.append(rec)
    parts = {}
    run_layer(l, p, [x], parts)
    h = _sample_rows(gelu(parts["hidden"]), idx)
    y2 = _sample_rows(acts_o[l.name], idx)
    w, b, rec = solve_system(f"{l.name}.fc2", h, y2, p["fc2_weight"], p["fc2_bias"])
    p["fc2_weight"], p["fc2_bias"] = w, b
    report.records.append(rec)


# ---------------------------------------------------------------- batchnorm statistics

def recalibrate_batchnorm(graph: NetworkGraph, weights: dict, inputs) -> dict:
    """Replace every batchnorm's running mean/var with statistics measured on ``inputs``."""
    new = {k: dict(v) for k, v in weights.items()}
    acts = {INPUT: np.asarray(inputs, np.float32)}
    for l in graph.layers:
        xs = [acts[s] for s in l.inputs]
        if l.kind == "batchnorm":
            x64 = xs[0].astype(np.float64)
            axes = (0,) + tuple(range(2, x64.ndim))
            new[l.name]["mean"] = x64.mean(axis=axes).astype(np.float32)
            new[l.name]["var"] = x64.var(axis=axes).astype(np.float32)
        acts[l.name] = run_layer(l, new.get(l.name, {}), xs)
    return new
