"""Minimal reverse-mode autodiff over numpy arrays.

Every differentiable operation used by the condensation pipeline lives here:
3x3/stride-1/pad-1 convolution, instance norm, ReLU, 2x2 average pooling,
affine layers, softmax cross-entropy, bilinear resizing, and the slicing /
padding / stacking plumbing the augmentations need. The tape is built eagerly
during the forward pass and consumed by a single `backward` call.

Convolution is evaluated channels-last internally (one large GEMM per layer);
the public interface is NCHW throughout.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, NonFiniteError, ShapeError

try:  # fused kernels; the numpy paths below remain the reference behaviour
    from . import _fast
except ImportError:  # pragma: no cover - numba not installed
    _fast = None

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Globally enable NaN/Inf detection on every op output."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


@contextlib.contextmanager
def debug_checks():
    """Context manager form of `set_debug_checks`."""
    global _DEBUG_CHECKS
    prev = _DEBUG_CHECKS
    _DEBUG_CHECKS = True
    try:
        yield
    finally:
        _DEBUG_CHECKS = prev


class Tensor:
    """An n-d float array that may participate in the differentiation tape.

    `data` is immutable by convention once the tensor has entered a graph;
    the optimizer rewrites leaf parameters in place between passes, which is
    safe because each forward pass builds a fresh tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def grad_or_zeros(self) -> np.ndarray:
        """Gradient accumulated by backward; zeros if this leaf was unused."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flag})"


def _node(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result; record the tape edge only if gradients can flow."""
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced by a tensor op")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a scalar loss.

    Populates `.grad` on every requires_grad tensor reachable from `loss`.
    The tape is consumed: a second call on the same loss raises GraphError.
    Leaf gradients accumulate across separate backward calls until reset.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("tape already consumed; rebuild the forward pass")

    topo: list[Tensor] = []
    seen = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        # release the tape as we go; keeps peak memory at one layer's worth
        node.grad = None
        node._parents = ()
        node._backward = None
    loss._consumed = True


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


@contextlib.contextmanager
def frozen(tensors):
    """Temporarily clear requires_grad, e.g. to embed through a fixed model."""
    tensors = list(tensors)
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    # subgradient at exactly 0 is 0; mask built lazily so graph-free
    # forwards (frozen models, inference) never pay for it
    return _node(out, (a,), lambda g: (g * (a.data > 0),))


def mean_rows(a: Tensor) -> Tensor:
    """[N, F] -> [F], the mean embedding of a batch."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a 2-d tensor, got {a.shape}")
    n = a.shape[0]

    def _bw(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _node(a.data.mean(axis=0), (a,), _bw)


def sum_squares(a: Tensor) -> Tensor:
    """Squared L2 norm of all entries, as a scalar tensor."""
    out = np.asarray((a.data * a.data).sum(), dtype=a.dtype)
    return _node(out, (a,), lambda g: (2.0 * g * a.data,))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def narrow0(a: Tensor, start: int, length: int) -> Tensor:
    """Contiguous slice along axis 0."""
    if start < 0 or start + length > a.shape[0]:
        raise ShapeError(f"narrow0 [{start}:{start + length}] out of range for {a.shape}")

    def _bw(g):
        gx = np.zeros_like(a.data)
        gx[start : start + length] = g
        return (gx,)

    return _node(a.data[start : start + length], (a,), _bw)


def interleave0(tensors) -> Tensor:
    """Stack T same-shape [B, ...] tensors as [B*T, ...], image-major."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("interleave0 of an empty sequence")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError("interleave0: inputs must share a shape")
    tcount = len(tensors)
    b = shape[0]
    out = np.stack([t.data for t in tensors], axis=1).reshape(b * tcount, *shape[1:])

    def _bw(g):
        gr = g.reshape(b, tcount, *shape[1:])
        return tuple(np.ascontiguousarray(gr[:, i]) for i in range(tcount))

    return _node(out, tensors, _bw)


# ---------------------------------------------------------------------------
# spatial ops (NCHW)


def _check_nchw(a: Tensor, op: str):
    if a.data.ndim != 4:
        raise ShapeError(f"{op} expects [B,C,H,W], got {a.shape}")


def flip_w(a: Tensor) -> Tensor:
    """Horizontal flip (last axis)."""
    _check_nchw(a, "flip_w")
    out = np.ascontiguousarray(a.data[..., ::-1])
    return _node(out, (a,), lambda g: (np.ascontiguousarray(g[..., ::-1]),))


def pad2d(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero padding of the two spatial axes."""
    _check_nchw(a, "pad2d")
    if min(top, bottom, left, right) < 0:
        raise ShapeError("pad2d amounts must be nonnegative")
    out = np.pad(a.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = a.shape[2], a.shape[3]

    def _bw(g):
        return (np.ascontiguousarray(g[:, :, top : top + h, left : left + w]),)

    return _node(out, (a,), _bw)


def crop2d(a: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    _check_nchw(a, "crop2d")
    if top < 0 or left < 0 or top + height > a.shape[2] or left + width > a.shape[3]:
        raise ShapeError(f"crop2d window out of range for {a.shape}")

    def _bw(g):
        gx = np.zeros_like(a.data)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return _node(a.data[:, :, top : top + height, left : left + width], (a,), _bw)


def avg_pool2d(a: Tensor) -> Tensor:
    """Non-overlapping 2x2 mean pooling; spatial extents must be even."""
    _check_nchw(a, "avg_pool2d")
    b, c, h, w = a.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2d needs even spatial extents, got {h}x{w}")
    out = a.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def _bw(g):
        gx = np.empty_like(a.data)
        gx.reshape(b, c, h // 2, 2, w // 2, 2)[:] = (g * 0.25)[:, :, :, None, :, None]
        return (gx,)

    return _node(out, (a,), _bw)


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for align-corners-false bilinear resizing."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def bilinear_resize(a: Tensor, out_h: int, out_w: int) -> Tensor:
    _check_nchw(a, "bilinear_resize")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize to empty extent {out_h}x{out_w}")
    h, w = a.shape[2], a.shape[3]
    rm = _resize_matrix(h, out_h, a.dtype)  # [out_h, h]
    cm = _resize_matrix(w, out_w, a.dtype)  # [out_w, w]
    out = np.matmul(np.matmul(rm, a.data), cm.T)

    def _bw(g):
        return (np.matmul(np.matmul(rm.T, g), cm),)

    return _node(out, (a,), _bw)


def _check_conv_args(a: Tensor, kernels: Tensor, bias: Tensor, channel_axis: int):
    if kernels.data.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernels must be [K,C,3,3], got {kernels.shape}")
    if kernels.shape[1] != a.shape[channel_axis]:
        raise ShapeError(
            f"conv2d channel mismatch: input {a.shape[channel_axis]}, "
            f"kernels {kernels.shape[1]}"
        )
    if bias.data.ndim != 1 or bias.shape[0] != kernels.shape[0]:
        raise ShapeError(f"conv2d bias must be [K], got {bias.shape}")


_CONV_CHUNK_BYTES = 6_000_000  # keep each im2col slab within the last-level cache


def _conv_chunk(h: int, w: int, c: int, itemsize: int) -> int:
    return max(8, _CONV_CHUNK_BYTES // (h * w * 9 * c * itemsize))


def _conv_nhwc_raw(x_nhwc, kernels, bias_vec, need_x, need_k, need_b):
    """Channels-last conv core: returns (out_nhwc, backward(g_nhwc)).

    The batch is processed in cache-sized chunks so each im2col slab is
    consumed by its GEMM before leaving cache; slabs are kept for the
    weight-gradient GEMMs in backward.
    """
    bsz, h, w, c = x_nhwc.shape
    k = kernels.shape[0]
    w2 = kernels.transpose(2, 3, 1, 0).reshape(9 * c, k)  # (di,dj,c) x k
    chunk = _conv_chunk(h, w, c, x_nhwc.itemsize)
    out = np.empty((bsz, h, w, k), dtype=x_nhwc.dtype)
    col_slabs = []
    for lo in range(0, bsz, chunk):
        hi = min(bsz, lo + chunk)
        cols2 = _im2col_nhwc(x_nhwc[lo:hi], h, w)  # [(hi-lo)*H*W, 9C]
        out2 = cols2 @ w2
        if bias_vec is not None:
            out2 += bias_vec
        out[lo:hi] = out2.reshape(hi - lo, h, w, k)
        if need_k:
            col_slabs.append(cols2)

    def _bw(g):
        gb = g.reshape(bsz * h * w, k).sum(axis=0) if need_b else None
        gk = None
        if need_k:
            gk2 = np.zeros((9 * c, k), dtype=x_nhwc.dtype)
            for i, lo in enumerate(range(0, bsz, chunk)):
                hi = min(bsz, lo + chunk)
                gk2 += col_slabs[i].T @ g[lo:hi].reshape((hi - lo) * h * w, k)
            gk = np.ascontiguousarray(gk2.reshape(3, 3, c, k).transpose(3, 2, 0, 1))
        gx = None
        if need_x:
            # input grad = correlation of g with spatially flipped, K/C-swapped kernels
            wflip = kernels[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(9 * k, c)
            gx = np.empty((bsz, h, w, c), dtype=x_nhwc.dtype)
            gchunk = _conv_chunk(h, w, k, x_nhwc.itemsize)
            for lo in range(0, bsz, gchunk):
                hi = min(bsz, lo + gchunk)
                gcols = _im2col_nhwc(np.ascontiguousarray(g[lo:hi]), h, w)
                gx[lo:hi] = (gcols @ wflip).reshape(hi - lo, h, w, c)
        return (gx, gk, gb)

    return out, _bw


def conv2d(a: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1.

    a: [B,C,H,W], kernels: [K,C,3,3], bias: [K] -> [B,K,H,W].
    """
    _check_nchw(a, "conv2d")
    _check_conv_args(a, kernels, bias, channel_axis=1)
    need = (a.requires_grad, kernels.requires_grad, bias.requires_grad)
    out_nhwc, bw_nhwc = _conv_nhwc_raw(
        np.ascontiguousarray(a.data.transpose(0, 2, 3, 1)),
        kernels.data, bias.data, *need,
    )
    out = np.ascontiguousarray(out_nhwc.transpose(0, 3, 1, 2))

    def _bw(g):
        gx, gk, gb = bw_nhwc(np.ascontiguousarray(g.transpose(0, 2, 3, 1)))
        if gx is not None:
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
        return (gx, gk, gb)

    return _node(out, (a, kernels, bias), _bw)


def conv2d_nhwc(a: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """conv2d on channels-last data: [B,H,W,C] -> [B,H,W,K].

    Same kernels layout as conv2d ([K,C,3,3]); this is the layout the model
    forward pass uses internally to keep the GEMMs copy-free.
    """
    if a.data.ndim != 4:
        raise ShapeError(f"conv2d_nhwc expects [B,H,W,C], got {a.shape}")
    _check_conv_args(a, kernels, bias, channel_axis=3)
    out, bw = _conv_nhwc_raw(a.data, kernels.data, bias.data, a.requires_grad,
                             kernels.requires_grad, bias.requires_grad)
    return _node(out, (a, kernels, bias), bw)


def _im2col_nhwc(x_nhwc: np.ndarray, h: int, w: int) -> np.ndarray:
    """3x3/pad-1 patch matrix [B*H*W, 9C] from a channels-last batch."""
    if _fast is not None:
        return _fast.im2col_3x3_nhwc(np.ascontiguousarray(x_nhwc))
    bsz, c = x_nhwc.shape[0], x_nhwc.shape[3]
    xp = np.pad(x_nhwc, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, h, w, 9, c), dtype=x_nhwc.dtype)
    for j in range(9):
        di, dj = divmod(j, 3)
        cols[:, :, :, j, :] = xp[:, di : di + h, dj : dj + w, :]
    return cols.reshape(bsz * h * w, 9 * c)


def _instance_norm_core(a: Tensor, gamma: Tensor, beta: Tensor, eps: float, axes,
                        expand):
    """Shared instance-norm math; `axes` are the spatial reduction axes and
    `expand` broadcasts the [C] affine params to the data layout."""
    if eps <= 0:
        raise ShapeError("instance_norm2d eps must be positive")
    xc = a.data - a.data.mean(axis=axes, keepdims=True)
    var = np.mean(xc * xc, axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = expand(gamma.data) * xhat + expand(beta.data)

    need_a, need_g, need_b = a.requires_grad, gamma.requires_grad, beta.requires_grad
    feat_axes = tuple(ax for ax in range(a.data.ndim) if ax not in axes)
    sum_axes = tuple(ax for ax in range(a.data.ndim) if ax != feat_axes[-1])

    def _bw(g):
        gb = g.sum(axis=sum_axes) if need_b else None
        gg = (g * xhat).sum(axis=sum_axes) if need_g else None
        gx = None
        if need_a:
            dxhat = g * expand(gamma.data)
            m1 = dxhat.mean(axis=axes, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
            gx = inv_std * (dxhat - m1 - xhat * m2)
        return (gx, gg, gb)

    return _node(out, (a, gamma, beta), _bw)


def instance_norm2d(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) normalization over H*W, then affine scale/shift."""
    _check_nchw(a, "instance_norm2d")
    c = a.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm2d affine params must be [{c}]")
    return _instance_norm_core(a, gamma, beta, eps, (2, 3),
                               lambda v: v[None, :, None, None])


def instance_norm2d_nhwc(a: Tensor, gamma: Tensor, beta: Tensor,
                         eps: float = 1e-5) -> Tensor:
    """Instance norm on channels-last data: reductions over axes (1, 2)."""
    if a.data.ndim != 4:
        raise ShapeError(f"instance_norm2d_nhwc expects [B,H,W,C], got {a.shape}")
    c = a.shape[3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"instance_norm2d_nhwc affine params must be [{c}]")
    if _fast is None:
        return _instance_norm_core(a, gamma, beta, eps, (1, 2), lambda v: v)
    if eps <= 0:
        raise ShapeError("instance_norm2d eps must be positive")

    out, xhat, inv_std = _fast.instance_norm_fwd_nhwc(
        np.ascontiguousarray(a.data), gamma.data, beta.data, a.dtype.type(eps)
    )
    need_a, need_g, need_b = a.requires_grad, gamma.requires_grad, beta.requires_grad

    def _bw(g):
        gx, gg, gb = _fast.instance_norm_bwd_nhwc(
            np.ascontiguousarray(g), xhat, inv_std, gamma.data, need_a
        )
        return (gx if need_a else None, gg if need_g else None, gb if need_b else None)

    return _node(out, (a, gamma, beta), _bw)


def avg_pool2d_nhwc(a: Tensor) -> Tensor:
    """2x2 mean pooling on channels-last data."""
    if a.data.ndim != 4:
        raise ShapeError(f"avg_pool2d_nhwc expects [B,H,W,C], got {a.shape}")
    b, h, w, c = a.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2d_nhwc needs even spatial extents, got {h}x{w}")
    out = a.data.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def _bw(g):
        gx = np.empty_like(a.data)
        gx.reshape(b, h // 2, 2, w // 2, 2, c)[:] = (g * 0.25)[:, :, None, :, None, :]
        return (gx,)

    return _node(out, (a,), _bw)


def to_nhwc(a: Tensor) -> Tensor:
    _check_nchw(a, "to_nhwc")
    out = np.ascontiguousarray(a.data.transpose(0, 2, 3, 1))
    return _node(out, (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(0, 3, 1, 2)),))


def linear(a: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: [B,F] @ [F,O] + [O]."""
    if a.data.ndim != 2:
        raise ShapeError(f"linear expects [B,F], got {a.shape}")
    if weight.data.ndim != 2 or weight.shape[0] != a.shape[1]:
        raise ShapeError(f"linear weight {weight.shape} incompatible with input {a.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias must be [{weight.shape[1]}], got {bias.shape}")
    out = a.data @ weight.data + bias.data

    need_a, need_w, need_b = a.requires_grad, weight.requires_grad, bias.requires_grad

    def _bw(g):
        gx = g @ weight.data.T if need_a else None
        gw = a.data.T @ g if need_w else None
        gb = g.sum(axis=0) if need_b else None
        return (gx, gw, gb)

    return _node(out, (a, weight, bias), _bw)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over the batch, max-stabilized.

    labels: integer class indices of shape [B].
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [B,C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    bsz, c = logits.shape
    if labels.shape != (bsz,):
        raise ShapeError(f"labels must be [{bsz}], got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    p = ez / denom
    nll = np.log(denom[:, 0]) - z[np.arange(bsz), labels]
    out = np.asarray(nll.mean(), dtype=logits.dtype)

    def _bw(g):
        gl = p.copy()
        gl[np.arange(bsz), labels] -= 1.0
        gl *= g / bsz
        return (gl,)

    return _node(out, (logits,), _bw)


# ---------------------------------------------------------------------------
# SGD with momentum and weight decay


@dataclass
class SgdState:
    """Momentum-SGD hyperparameters plus one velocity buffer per parameter."""

    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    buffers: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ShapeError("sgd lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ShapeError("sgd momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ShapeError("sgd weight_decay must be nonnegative")


def sgd_update(params, grads, state: SgdState) -> None:
    """v <- momentum*v + (g + wd*p); p <- p - lr*v, in place on param data.

    `grads` entries may be None (parameter unused by the last loss); the
    gradient term is then zero but weight decay still applies.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError("sgd_update: params/grads length mismatch")
    if not state.buffers:
        state.buffers = [np.zeros_like(p.data) for p in params]
    if len(state.buffers) != len(params):
        raise ShapeError("sgd_update: optimizer state does not match params")
    for p, g, v in zip(params, grads, state.buffers):
        step = np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=True)
        if state.weight_decay:
            step += state.weight_decay * p.data
        v *= state.momentum
        v += step
        p.data -= state.lr * v
