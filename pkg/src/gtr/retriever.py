"""Global temporal retriever: cycle-indexed embedding lookup and fusion.

A learnable ``L x N`` table holds one full cycle per channel. For a window
starting at absolute row ``t0`` the rows covering the window are gathered,
passed through a shared ``T x T`` alignment map, stacked under the local
series and fused back into it through a small convolution with a
residual + dropout merge. Output shape always equals input shape.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

VARIANTS = ("conv2d", "pointwise", "inception", "conv1d")


def kernel_width(period: int) -> int:
    """Fusion kernel width ``1 + 2 * (P // 2)`` (always odd)."""
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    return 1 + 2 * (period // 2)


def inception_widths(period: int) -> tuple[int, ...]:
    half = period // 2
    mid = max(3, half if half % 2 else half + 1)
    return tuple(sorted({3, mid, kernel_width(period)}))


def compute_cycle_index(t0, T: int, L: int) -> np.ndarray:
    """Position of every window step inside the global cycle.

    ``t0`` may be a scalar (returns shape ``(T,)``) or a vector of window
    starts (returns ``(B, T)``).
    """
    if L < 1:
        raise ValueError(f"cycle length must be >= 1, got {L}")
    if T < 1:
        raise ValueError(f"window length must be >= 1, got {T}")
    t0 = np.asarray(t0, dtype=np.int64)
    if np.any(t0 < 0):
        raise ValueError("window start must be non-negative")
    return ((t0[..., None] % L) + np.arange(T)) % L


class FusionVariant:
    """Parameters and forward rule for one way of merging local and global rows."""

    def __init__(self, tag: str, period: int, rng: np.random.Generator | None = None):
        if tag not in VARIANTS:
            raise ValueError(f"unknown fusion variant {tag!r}; expected one of {VARIANTS}")
        self.tag = tag
        self.period = period
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        rng = rng if rng is not None else np.random.default_rng(0)
        if tag in ("conv2d", "conv1d", "pointwise"):
            # Local row starts at zero, global row random. The global row only
            # sees q, which is exactly zero while Q and b_align are zero, so the
            # module is still an identity at start; an all-zero kernel would
            # leave Q, W_align and b_align with zero gradient forever.
            width = 1 if tag == "pointwise" else kernel_width(period)
            kernel = np.zeros((2, width))
            bound = 1.0 / np.sqrt(2 * width)
            kernel[1] = rng.uniform(-bound, bound, width)
            self.params["weight" if tag == "pointwise" else "kernel"] = ad.parameter(kernel)
            self.params["bias"] = ad.parameter(np.zeros(1))
        else:
            # same idea: random branch kernels, zero mixing weights
            widths = inception_widths(period)
            for w in widths:
                bound = 1.0 / np.sqrt(2 * w)
                self.params[f"kernel_{w}"] = ad.parameter(rng.uniform(-bound, bound, (2, w)))
                self.params[f"bias_{w}"] = ad.parameter(np.zeros(1))
            self.params["mix_weight"] = ad.parameter(np.zeros((len(widths), 1)))
            self.params["mix_bias"] = ad.parameter(np.zeros(1))

    def shapes(self) -> OrderedDict[str, tuple[int, ...]]:
        return OrderedDict((k, v.shape) for k, v in self.params.items())

    def __call__(self, f: Tensor) -> Tensor:
        """Fuse a ``(..., 2, T)`` stack into ``(..., T)``."""
        p = self.params
        if self.tag == "conv2d":
            return ad.conv_2row(f, p["kernel"], p["bias"])
        if self.tag == "conv1d":
            return ad.conv_1row(f, p["kernel"], p["bias"])
        if self.tag == "pointwise":
            return ad.conv_2row(f, p["weight"], p["bias"])
        branches = [
            ad.conv_2row(f, p[f"kernel_{w}"], p[f"bias_{w}"]) for w in inception_widths(self.period)
        ]
        mixed = ad.linear(ad.stack_last(branches), p["mix_weight"], p["mix_bias"])
        return ad.reshape(mixed, mixed.shape[:-1])

    def __repr__(self) -> str:
        return f"FusionVariant({self.tag!r}, period={self.period})"


class GtrModule:
    """Learnable state of the retriever.

    Parameters
    ----------
    T : lookback length.
    N : number of channels.
    L : global cycle length in steps.
    P : dominant short period; sets the fusion kernel width.
    variant : one of ``VARIANTS``.
    dropout_rate : dropout applied to the fusion output.
    gta : aggregate the retrieved embedding across channels first.
    rng : init stream for the alignment map (and inception branches).
    """

    def __init__(
        self,
        T: int,
        N: int,
        L: int,
        P: int = 24,
        variant: str = "conv2d",
        dropout_rate: float = 0.1,
        gta: bool = False,
        rng: np.random.Generator | None = None,
    ):
        if L < 1 or T < 1 or N < 1 or P < 1:
            raise ValueError(f"T, N, L, P must all be >= 1 (got {T}, {N}, {L}, {P})")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.T, self.N, self.L, self.P = T, N, L, P
        self.dropout_rate = dropout_rate
        self.gta = gta
        bound = 1.0 / np.sqrt(T)
        self.Q = ad.parameter(np.zeros((L, N)))
        self.W_align = ad.parameter(rng.uniform(-bound, bound, (T, T)))
        self.b_align = ad.parameter(np.zeros(T))
        self.fusion = FusionVariant(variant, P, rng)

    @property
    def variant(self) -> str:
        return self.fusion.tag

    def parameters(self) -> OrderedDict[str, Tensor]:
        out = OrderedDict([("Q", self.Q), ("W_align", self.W_align), ("b_align", self.b_align)])
        for k, v in self.fusion.params.items():
            out[f"fusion.{k}"] = v
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


def _as_batch(x: Tensor, t0) -> tuple[Tensor, np.ndarray, bool]:
    single = x.data.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    starts = np.atleast_1d(np.asarray(t0, dtype=np.int64))
    if starts.shape != (x.shape[0],):
        raise ValueError(f"need one start position per window: {starts.shape} vs batch {x.shape[0]}")
    return x, starts, single


def _retrieve_time_last(module: GtrModule, idx: np.ndarray) -> Tensor:
    """Gather + align, returned as ``(B, N, T)``."""
    if idx.size and (idx.min() < 0 or idx.max() >= module.L):
        raise IndexError(f"cycle index outside [0, {module.L})")
    rows = ad.gather_rows(module.Q, idx)  # (B, T, N)
    return ad.linear(ad.swap_last(rows), module.W_align, module.b_align)


def retrieve(module: GtrModule, idx: np.ndarray) -> Tensor:
    """Aligned global reference for each window: ``(T, N)`` or ``(B, T, N)``."""
    idx = np.asarray(idx)
    if idx.ndim == 1:
        return ad.reshape(ad.swap_last(_retrieve_time_last(module, idx[None])), (idx.shape[0], module.N))
    return ad.swap_last(_retrieve_time_last(module, idx))


def gta_transform(q_bar: Tensor) -> Tensor:
    """Softmax-weighted channel aggregate broadcast back to every channel."""
    n = q_bar.shape[-1]
    weight = ad.softmax_channels(q_bar)
    token = ad.sum_axis(ad.mul(q_bar, weight), axis=-1)
    return ad.broadcast_last(token, n)


def fuse(x_channel: Tensor, q_channel: Tensor, variant: FusionVariant) -> Tensor:
    """Stack local and global rows (``(..., T)`` each) and fuse to ``(..., T)``."""
    if x_channel.shape != q_channel.shape:
        raise ValueError(f"fuse: local {x_channel.shape} and global {q_channel.shape} differ")
    return variant(ad.stack_rows(x_channel, q_channel))


def gtr_channels(module: GtrModule, x: Tensor, t0, training: bool, rng) -> Tensor:
    """Run the retriever on ``(B, T, N)`` input; output is ``(B*N, T)`` rows.

    This is the layout the forecaster consumes directly.
    """
    B, T, N = x.shape
    if T != module.T or N != module.N:
        raise ValueError(f"input {x.shape[1:]} does not match module (T={module.T}, N={module.N})")
    idx = compute_cycle_index(t0, T, module.L)
    q = _retrieve_time_last(module, idx)  # (B, N, T)
    if module.gta:
        q = ad.swap_last(gta_transform(ad.swap_last(q)))
    local = ad.reshape(ad.swap_last(x), (B * N, T))
    h = fuse(local, ad.reshape(q, (B * N, T)), module.fusion)
    return ad.add(local, ad.dropout(h, module.dropout_rate, training, rng))


def gtr_forward(module: GtrModule, x: Tensor, t0, training: bool = False, rng=None) -> Tensor:
    """Enhanced series with the same shape as ``x`` (``(T, N)`` or ``(B, T, N)``)."""
    xb, starts, single = _as_batch(x, t0)
    B, T, N = xb.shape
    z = ad.swap_last(ad.reshape(gtr_channels(module, xb, starts, training, rng), (B, N, T)))
    return ad.reshape(z, (T, N)) if single else z
