"""Dense float32 kernels used by the inference engine and the reconstruction solver.

Tensors are plain ``numpy.ndarray`` objects of dtype float32. Reductions are
accumulated in float64 and rounded back to float32 on output, so results are
comparable with straightforward loop oracles.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_triangular
from scipy.special import erf

from .errors import DimensionError, NumericError

F32 = np.float32
F64 = np.float64

# Relative threshold on |diag(R)| below which the QR path is abandoned.
_QR_RCOND = 1e-9
# Ridge strength relative to the mean diagonal of a^T a.
RIDGE_EPS = 1e-8


def as_tensor(x, dtype=F32) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def _require_rank(x, rank, what):
    if x.ndim != rank:
        raise DimensionError(f"{what} must be rank {rank}, got shape {tuple(x.shape)}")


def matmul(a, b) -> np.ndarray:
    """Matrix product of ``a`` [m x k] and ``b`` [k x n] with float64 accumulation."""
    a = np.asarray(a)
    b = np.asarray(b)
    _require_rank(a, 2, "matmul lhs")
    _require_rank(b, 2, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}"
        )
    return (a.astype(F64) @ b.astype(F64)).astype(F32)


def output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv_windows(x, k1, k2, stride, padding):
    """View of all receptive fields, shape [N, C, H', W', k1, k2] (no copy)."""
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride={stride} / padding={padding}")
    xp = _pad(x, padding)
    if xp.shape[2] < k1 or xp.shape[3] < k2:
        raise DimensionError(
            f"kernel {k1}x{k2} larger than padded input {xp.shape[2]}x{xp.shape[3]}"
        )
    win = sliding_window_view(xp, (k1, k2), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def im2col(x, k1, k2, stride=1, padding=0) -> np.ndarray:
    """Unroll ``x`` [N, C, H, W] into rows [(N*H'*W') x (C*k1*k2)].

    Row order is (n, oy, ox); column order is (c, ky, kx), matching a kernel
    reshaped to [C_out, C*k1*k2].
    """
    x = np.asarray(x)
    _require_rank(x, 4, "im2col input")
    win = conv_windows(x, k1, k2, stride, padding)
    n, c, ho, wo = win.shape[:4]
    # filling tap by tap is far cheaper than reshaping the 6-d strided view
    out = np.empty((n, ho, wo, c, k1, k2), dtype=x.dtype)
    for i in range(k1):
        for j in range(k2):
            out[..., i, j] = win[..., i, j].transpose(0, 2, 3, 1)
    return out.reshape(n * ho * wo, c * k1 * k2)


def conv2d_forward(x, kernel, stride=1, padding=0, bias=None, groups=1) -> np.ndarray:
    """Cross-correlation of ``x`` [N, C_in, H, W] with ``kernel`` [C_out, C_in/groups, K1, K2]."""
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    _require_rank(x, 4, "conv2d input")
    _require_rank(kernel, 4, "conv2d kernel")
    n, c_in, h, w = x.shape
    c_out, c_per_group, k1, k2 = kernel.shape
    if groups < 1 or c_in % groups or c_out % groups or c_in // groups != c_per_group:
        raise DimensionError(
            f"conv2d channel mismatch: input {tuple(x.shape)}, kernel {tuple(kernel.shape)}, groups={groups}"
        )
    ho, wo = output_size(h, k1, stride, padding), output_size(w, k2, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d output would be empty for input {tuple(x.shape)}")
    if groups == 1:
        cols = im2col(x.astype(F64), k1, k2, stride, padding)
        out = cols @ kernel.reshape(c_out, -1).T.astype(F64)
        out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    elif groups == c_in == c_out:
        win = conv_windows(x.astype(F64), k1, k2, stride, padding)
        out = np.einsum("nchwij,cij->nchw", win, kernel[:, 0].astype(F64))
    else:
        outs = []
        og = c_out // groups
        for g in range(groups):
            part = conv2d_forward(
                x[:, g * c_per_group:(g + 1) * c_per_group],
                kernel[g * og:(g + 1) * og], stride, padding,
            )
            outs.append(part.astype(F64))
        out = np.concatenate(outs, axis=1)
    if bias is not None:
        out = out + np.asarray(bias, dtype=F64).reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out, dtype=F32)


def max_pool2d(x, kernel, stride, padding=0) -> np.ndarray:
    x = np.asarray(x)
    _require_rank(x, 4, "max_pool2d input")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=-np.inf)
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.max(axis=(4, 5)), dtype=F32)


def dense_forward(x, weight, bias=None) -> np.ndarray:
    """Affine map over the last axis; ``weight`` is [out, in]."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    _require_rank(weight, 2, "dense weight")
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"dense input {tuple(x.shape)} incompatible with weight {tuple(weight.shape)}"
        )
    out = x.reshape(-1, x.shape[-1]).astype(F64) @ weight.T.astype(F64)
    if bias is not None:
        out = out + np.asarray(bias, dtype=F64)
    return out.reshape(*x.shape[:-1], weight.shape[0]).astype(F32)


def batchnorm_inference_forward(x, mean, var, gamma, beta, eps=1e-5) -> np.ndarray:
    """Per-channel affine using stored statistics; channel axis is 1."""
    x = np.asarray(x)
    c = x.shape[1]
    for name, p in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if np.shape(p) != (c,):
            raise DimensionError(f"batchnorm {name} has shape {np.shape(p)}, expected ({c},)")
    shape = (1, c) + (1,) * (x.ndim - 2)
    scale = np.asarray(gamma, F64) / np.sqrt(np.asarray(var, F64) + eps)
    shift = np.asarray(beta, F64) - np.asarray(mean, F64) * scale
    return (x.astype(F64) * scale.reshape(shape) + shift.reshape(shape)).astype(F32)


def layernorm_forward(x, gamma, beta, eps=1e-6) -> np.ndarray:
    x = np.asarray(x)
    if np.shape(gamma) != (x.shape[-1],) or np.shape(beta) != (x.shape[-1],):
        raise DimensionError(
            f"layernorm params {np.shape(gamma)}/{np.shape(beta)} do not match input {tuple(x.shape)}"
        )
    x64 = x.astype(F64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=-1, keepdims=True)
    out = (x64 - mu) / np.sqrt(var + eps) * np.asarray(gamma, F64) + np.asarray(beta, F64)
    return out.astype(F32)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, F32), F32(0))


def gelu(x) -> np.ndarray:
    """Exact (erf) GELU."""
    x = np.asarray(x, F32)
    return F32(0.5) * x * (F32(1.0) + erf(x * F32(np.sqrt(0.5))))


def softmax(x, axis=-1) -> np.ndarray:
    x64 = np.asarray(x, F64)
    z = x64 - x64.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=axis, keepdims=True)).astype(F32)


def global_average_pool(x) -> np.ndarray:
    x = np.asarray(x)
    _require_rank(x, 4, "global_average_pool input")
    return x.astype(F64).mean(axis=(2, 3)).astype(F32)


def argmax_classify(logits) -> np.ndarray:
    """Top-1 class per row; ties resolve to the lowest class index."""
    logits = np.asarray(logits)
    _require_rank(logits, 2, "logits")
    return np.argmax(logits, axis=1)


def attention_forward(tokens, qkv_weight, proj_weight, head_count, head_dim,
                      qkv_bias=None, proj_bias=None, return_parts=False):
    """Multi-head self-attention over ``tokens`` [N, T, D].

    ``qkv_weight`` is [3*H*dh, D] with rows laid out as (q|k|v, head, dim);
    ``proj_weight`` is [D, H*dh]. With ``return_parts`` the raw qkv
    activations and the pre-projection context are returned as well.
    """
    tokens = np.asarray(tokens)
    _require_rank(tokens, 3, "attention tokens")
    n, t, d = tokens.shape
    inner = head_count * head_dim
    qkv_weight = np.asarray(qkv_weight)
    proj_weight = np.asarray(proj_weight)
    if qkv_weight.shape != (3 * inner, d):
        raise DimensionError(
            f"qkv weight {tuple(qkv_weight.shape)} inconsistent with head_count={head_count}, "
            f"head_dim={head_dim}, D={d}"
        )
    if proj_weight.ndim != 2 or proj_weight.shape[1] != inner:
        raise DimensionError(
            f"projection weight {tuple(proj_weight.shape)} inconsistent with "
            f"head_count*head_dim={inner}"
        )
    qkv = tokens.reshape(n * t, d).astype(F64) @ qkv_weight.T.astype(F64)
    if qkv_bias is not None:
        qkv = qkv + np.asarray(qkv_bias, F64)
    qkv = qkv.reshape(n, t, 3, head_count, head_dim).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.transpose(0, 1, 3, 2)) * (head_dim ** -0.5)
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(n, t, inner)
    out = ctx.reshape(n * t, inner) @ proj_weight.T.astype(F64)
    if proj_bias is not None:
        out = out + np.asarray(proj_bias, F64)
    out = out.reshape(n, t, proj_weight.shape[0]).astype(F32)
    if return_parts:
        qkv_flat = qkv.transpose(1, 3, 0, 2, 4).reshape(n, t, 3 * inner).astype(F32)
        return out, qkv_flat, ctx.astype(F32)
    return out


def least_squares_solve(a, b, return_info=False):
    """Solve ``min_W ||a W - b||_F`` for ``a`` [m x k], ``b`` [m x n].

    Householder QR on the design matrix; when R is numerically rank deficient
    (or m < k) the ridge system ``(a^T a + lam I) W = a^T b`` with
    ``lam = 1e-8 * trace(a^T a) / k`` is solved instead. With ``return_info``
    returns ``(W, ridge_used)``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _require_rank(a, 2, "least-squares design matrix")
    _require_rank(b, 2, "least-squares targets")
    m, k = a.shape
    if m == 0 or k == 0 or b.shape[1] == 0:
        raise DimensionError(f"empty least-squares system: a {tuple(a.shape)}, b {tuple(b.shape)}")
    if b.shape[0] != m:
        raise DimensionError(f"row mismatch: a {tuple(a.shape)}, b {tuple(b.shape)}")
    a64 = a.astype(F64)
    b64 = b.astype(F64)
    if not (np.isfinite(a64).all() and np.isfinite(b64).all()):
        raise NumericError("least-squares inputs contain non-finite values")

    ridge = m < k
    if not ridge:
        if b64.shape[1] <= k:
            # factoring [a | b] yields R and Q^T b together without forming Q
            r_aug = np.linalg.qr(np.concatenate([a64, b64], axis=1), mode="r")
            r, qtb = r_aug[:k, :k], r_aug[:k, k:]
        else:
            q, r = np.linalg.qr(a64, mode="reduced")
            qtb = q.T @ b64
        diag = np.abs(np.diag(r))
        ridge = diag.max() == 0.0 or diag.min() <= _QR_RCOND * diag.max()
        if not ridge:
            w = solve_triangular(r, qtb, lower=False)
    if ridge:
        gram = a64.T @ a64
        lam = RIDGE_EPS * np.trace(gram) / k
        if lam == 0.0:
            w = np.zeros((k, b.shape[1]))
        else:
            w = np.linalg.solve(gram + lam * np.eye(k), a64.T @ b64)
    if not np.isfinite(w).all():
        raise NumericError("least-squares solution is not finite")
    w = w.astype(F32)
    return (w, bool(ridge)) if return_info else w
