"""Small reverse-mode differentiation engine over numpy arrays.

Only the operations the forecaster needs are provided. Every tensor is
float64, at most rank 3, and every op output is checked for finiteness so
that a NaN/Inf stops the computation where it first appears.

Backward replays nodes in exact reverse creation order; each tensor gets a
monotonically increasing id at construction time.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

__all__ = [
    "NonFiniteError",
    "Tensor",
    "Graph",
    "tensor",
    "parameter",
    "backward",
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "linear",
    "gelu",
    "conv_2row",
    "conv_1row",
    "softmax_channels",
    "dropout",
    "mse_loss",
    "mean_axis",
    "var_axis",
    "sum_axis",
    "broadcast_last",
    "reshape",
    "swap_last",
    "stack_rows",
    "stack_last",
    "gather_rows",
    "normalize_instance",
    "denormalize_instance",
]

MAX_RANK = 3
_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when an engine op produces NaN or Inf."""


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "id")

    def __init__(self, data, requires_grad: bool = False, *, parents=(), backward_fn=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"rank {arr.ndim} exceeds the engine limit of {MAX_RANK}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value produced by '{op}'")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.op = op
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    __rmul__ = __mul__


def tensor(data) -> Tensor:
    """Constant tensor (no gradient)."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _node(data, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=needs,
        parents=parents if needs else (),
        backward_fn=backward_fn if needs else None,
        op=op,
    )


class Graph:
    """Nodes reachable from an output, in execution order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> Graph:
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            t = stack.pop()
            if t.id in seen or not t.requires_grad:
                continue
            seen[t.id] = t
            stack.extend(t.parents)
        return cls(sorted(seen.values(), key=lambda t: t.id))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf requiring grad.

    Intermediate adjoints live only for the duration of the call; leaf
    gradients add onto whatever is already stored.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    graph = Graph.from_output(loss)
    adjoints: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = adjoints.pop(node.id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = adjoints.get(parent.id)
            adjoints[parent.id] = pg if prev is None else prev + pg
    return graph


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: cannot map {x.shape} with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ wd.T
        x2 = xd.reshape(-1, xd.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw, "linear")


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GeLU: ``0.5 x (1 + erf(x / sqrt 2))``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _node(xd * cdf, (x,), bw, "gelu")


def _conv_args(f: Tensor, kernel: Tensor, bias: Tensor) -> int:
    if f.data.ndim < 2 or f.shape[-2] != 2:
        raise ValueError(f"conv: input must be (..., 2, T), got {f.shape}")
    if kernel.data.ndim != 2 or kernel.shape[0] != 2:
        raise ValueError(f"conv: kernel must have 2 rows, got {kernel.shape}")
    width = kernel.shape[1]
    if width % 2 == 0:
        raise ValueError(f"conv: kernel width must be odd, got {width}")
    if bias.shape != (1,):
        raise ValueError(f"conv: bias must be shape (1,), got {bias.shape}")
    return width


def conv_2row(f: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlate a (..., 2, T) input with a 2 x W kernel.

    The row axis is consumed entirely (no padding) and the time axis is
    zero-padded by W // 2 on both ends, so the output is (..., T).
    """
    width = _conv_args(f, kernel, bias)
    pad = width // 2
    T = f.shape[-1]
    lead = f.shape[:-2]
    fd = f.data.reshape(-1, 2, T)
    kd = kernel.data
    padded = np.pad(fd, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(padded, width, axis=2)  # (M, 2, T, W)
    out = np.einsum("mrtw,rw->mt", win, kd, optimize=True) + bias.data[0]

    def bw(g):
        g2 = g.reshape(-1, T)
        gk = np.einsum("mrtw,mt->rw", win, g2, optimize=True)
        gpad = np.zeros_like(padded)
        for w in range(width):
            gpad[:, :, w : w + T] += kd[None, :, w, None] * g2[:, None, :]
        gf = gpad[:, :, pad : pad + T].reshape(f.shape)
        return gf, gk, np.array([g2.sum()])

    return _node(out.reshape(lead + (T,)), (f, kernel, bias), bw, "conv_2row")


def conv_1row(f: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution with the two rows of ``f`` as input channels.

    Same map as :func:`conv_2row`; computed channel by channel with shifted
    slices instead of a window view.
    """
    width = _conv_args(f, kernel, bias)
    pad = width // 2
    T = f.shape[-1]
    lead = f.shape[:-2]
    fd = f.data.reshape(-1, 2, T)
    kd = kernel.data
    out = np.full((fd.shape[0], T), bias.data[0])
    for ch in range(2):
        xs = np.pad(fd[:, ch, :], ((0, 0), (pad, pad)))
        for w in range(width):
            out += kd[ch, w] * xs[:, w : w + T]

    def bw(g):
        g2 = g.reshape(-1, T)
        gk = np.empty_like(kd)
        gf = np.zeros_like(fd)
        for ch in range(2):
            xs = np.pad(fd[:, ch, :], ((0, 0), (pad, pad)))
            gxs = np.zeros_like(xs)
            for w in range(width):
                gk[ch, w] = np.sum(xs[:, w : w + T] * g2)
                gxs[:, w : w + T] += kd[ch, w] * g2
            gf[:, ch, :] = gxs[:, pad : pad + T]
        return gf.reshape(f.shape), gk, np.array([g2.sum()])

    return _node(out.reshape(lead + (T,)), (f, kernel, bias), bw, "conv_1row")


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return _node(s, (x,), bw, "softmax")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or not training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or not training:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size
    val = np.array(np.mean(diff * diff))

    def bw(g):
        gd = g * (2.0 / n) * diff
        return gd, -gd

    return _node(val, (pred, target), bw, "mse_loss")


def sum_axis(x: Tensor, axis: int) -> Tensor:
    """Sum over ``axis`` keeping it as a length-1 dimension."""
    axis = axis % x.data.ndim
    shape = x.shape
    return _node(
        x.data.sum(axis=axis, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
        "sum_axis",
    )


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over ``axis`` keeping it as a length-1 dimension."""
    axis = axis % x.data.ndim
    n = x.shape[axis]
    shape = x.shape
    return _node(
        x.data.mean(axis=axis, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
        "mean_axis",
    )


def var_axis(x: Tensor, axis: int) -> Tensor:
    """Population variance (denominator n) over ``axis``, kept as length 1."""
    axis = axis % x.data.ndim
    n = x.shape[axis]
    centred = x.data - x.data.mean(axis=axis, keepdims=True)
    val = np.mean(centred * centred, axis=axis, keepdims=True)
    return _node(val, (x,), lambda g: (g * (2.0 / n) * centred,), "var_axis")


def broadcast_last(x: Tensor, n: int) -> Tensor:
    """Repeat a (..., 1) tensor to (..., n)."""
    if x.shape[-1] != 1:
        raise ValueError(f"broadcast_last expects a trailing singleton axis, got {x.shape}")
    out = np.repeat(x.data, n, axis=-1)
    return _node(out, (x,), lambda g: (g.sum(axis=-1, keepdims=True),), "broadcast_last")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def swap_last(x: Tensor) -> Tensor:
    """Swap the two trailing axes."""
    return _node(
        np.ascontiguousarray(np.swapaxes(x.data, -1, -2)),
        (x,),
        lambda g: (np.swapaxes(g, -1, -2),),
        "swap_last",
    )


def stack_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two (..., T) tensors into (..., 2, T)."""
    _check_same(a, b, "stack_rows")
    return _node(np.stack([a.data, b.data], axis=-2), (a, b), lambda g: (g[..., 0, :], g[..., 1, :]), "stack_rows")


def stack_last(parts: Sequence[Tensor]) -> Tensor:
    """Stack k same-shape tensors along a new trailing axis."""
    if not parts:
        raise ValueError("stack_last needs at least one tensor")
    for p in parts[1:]:
        _check_same(parts[0], p, "stack_last")
    k = len(parts)
    return _node(
        np.stack([p.data for p in parts], axis=-1),
        parts,
        lambda g: tuple(g[..., i] for i in range(k)),
        "stack_last",
    )


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """``table[idx]`` for an integer index array; adjoint scatter-adds."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError("gather_rows needs integer indices")
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"gather index out of range for table with {rows} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _node(table.data[idx], (table,), bw, "gather_rows")


def _check_stats(x: Tensor, mu: Tensor, var: Tensor, what: str) -> None:
    if mu.shape != var.shape or x.data.ndim != mu.data.ndim:
        raise ValueError(f"{what}: statistics shape {mu.shape}/{var.shape} do not fit {x.shape}")


def normalize_instance(x: Tensor, mu: Tensor, var: Tensor, eps: float) -> Tensor:
    """``(x - mu) / sqrt(var + eps)`` with ``mu``/``var`` broadcast along a singleton axis."""
    _check_stats(x, mu, var, "normalize_instance")
    std = np.sqrt(var.data + eps)
    centred = x.data - mu.data
    out = centred / std
    axes = tuple(i for i, s in enumerate(mu.shape) if s == 1 and x.shape[i] != 1)

    def bw(g):
        gx = g / std
        gmu = -gx.sum(axis=axes, keepdims=True)
        gvar = (-0.5 * g * centred / (std**3)).sum(axis=axes, keepdims=True)
        return gx, gmu, gvar

    return _node(out, (x, mu, var), bw, "normalize_instance")


def denormalize_instance(y: Tensor, mu: Tensor, var: Tensor, eps: float) -> Tensor:
    """``y * sqrt(var + eps) + mu``, the inverse of :func:`normalize_instance`."""
    _check_stats(y, mu, var, "denormalize_instance")
    std = np.sqrt(var.data + eps)
    yd = y.data
    axes = tuple(i for i, s in enumerate(mu.shape) if s == 1 and y.shape[i] != 1)

    def bw(g):
        gmu = g.sum(axis=axes, keepdims=True)
        gvar = (g * yd * 0.5 / std).sum(axis=axes, keepdims=True)
        return g * std, gmu, gvar

    return _node(yd * std + mu.data, (y, mu, var), bw, "denormalize_instance")
