"""MLP forecaster with optional instance normalization and retriever."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .retriever import GtrModule, gtr_channels


@dataclass
class RevinState:
    """Per-call instance statistics; ``mu``/``var`` are graph nodes."""

    eps: float = 1e-5
    mu: Tensor | None = None
    var: Tensor | None = None


def revin_normalize(x: Tensor, state: RevinState) -> Tensor:
    """Remove per-window, per-channel mean and variance over the time axis."""
    state.mu = ad.mean_axis(x, axis=-2)
    state.var = ad.var_axis(x, axis=-2)
    return ad.normalize_instance(x, state.mu, state.var, state.eps)


def revin_denormalize(y: Tensor, state: RevinState) -> Tensor:
    if state.mu is None or state.var is None:
        raise RuntimeError("revin_denormalize called before revin_normalize")
    return ad.denormalize_instance(y, state.mu, state.var, state.eps)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class ForecastModel:
    """Maps a ``(T, N)`` lookback (or a ``(B, T, N)`` batch) to ``(S, N)``.

    Every time-axis / feature-axis map is shared across channels.
    """

    def __init__(
        self,
        T: int,
        S: int,
        N: int,
        L: int = 24,
        P: int = 24,
        D: int = 512,
        *,
        use_revin: bool = True,
        use_gtr: bool = True,
        variant: str = "conv2d",
        gta: bool = False,
        dropout_rate: float = 0.1,
        revin_eps: float = 1e-5,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.T, self.S, self.N, self.L, self.P, self.D = T, S, N, L, P, D
        self.use_revin = use_revin
        self.dropout_rate = dropout_rate
        self.revin_eps = revin_eps
        self.gtr = GtrModule(T, N, L, P, variant, dropout_rate, gta, rng) if use_gtr else None
        self._variant = variant
        self._gta = gta
        self.W_in = ad.parameter(_uniform(rng, T, (T, D)))
        self.b_in = ad.parameter(np.zeros(D))
        self.W_mlp1 = ad.parameter(_uniform(rng, D, (D, D)))
        self.b_mlp1 = ad.parameter(np.zeros(D))
        self.W_mlp2 = ad.parameter(_uniform(rng, D, (D, D)))
        self.b_mlp2 = ad.parameter(np.zeros(D))
        self.W_out = ad.parameter(_uniform(rng, D, (D, S)))
        self.b_out = ad.parameter(np.zeros(S))

    @property
    def use_gtr(self) -> bool:
        return self.gtr is not None

    @property
    def variant(self) -> str:
        return self._variant

    @property
    def gta(self) -> bool:
        return self._gta

    def parameters(self) -> OrderedDict[str, Tensor]:
        """All learnable tensors in checkpoint order."""
        out: OrderedDict[str, Tensor] = OrderedDict()
        if self.gtr is not None:
            for k, v in self.gtr.parameters().items():
                out[f"gtr.{k}"] = v
        for name in ("W_in", "b_in", "W_mlp1", "b_mlp1", "W_mlp2", "b_mlp2", "W_out", "b_out"):
            out[name] = getattr(self, name)
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def backbone_parameters(self) -> int:
        T, D, S = self.T, self.D, self.S
        return T * D + D + 2 * (D * D + D) + D * S + S

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_arrays(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.parameters().items())

    def load_arrays(self, arrays) -> None:
        params = self.parameters()
        if list(arrays) != list(params):
            raise ValueError("parameter names do not match this model")
        for k, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != params[k].shape:
                raise ValueError(f"{k}: shape {arr.shape} != {params[k].shape}")
            params[k].data = arr.copy()

    def forward(self, x, t0, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return model_forward(self, x, t0, training, rng)

    def predict(self, x, t0) -> np.ndarray:
        """Eval-mode forward returning a plain array."""
        return model_forward(self, x, t0, training=False).data


def model_forward(m: ForecastModel, x, t0, training: bool = False, rng=None) -> Tensor:
    """RevIN -> retriever -> T->D projection -> residual GeLU MLP -> dropout -> D->S -> inverse RevIN."""
    if not isinstance(x, Tensor):
        x = ad.tensor(x)
    single = x.data.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    B, T, N = x.shape
    if (T, N) != (m.T, m.N):
        raise ValueError(f"input window {x.shape[1:]} does not match model (T={m.T}, N={m.N})")
    starts = np.atleast_1d(np.asarray(t0, dtype=np.int64))
    if starts.shape != (B,):
        raise ValueError(f"need one start position per window, got {starts.shape} for batch {B}")

    state = RevinState(m.revin_eps)
    if m.use_revin:
        x = revin_normalize(x, state)
    if m.gtr is not None:
        z = gtr_channels(m.gtr, x, starts, training, rng)
    else:
        z = ad.reshape(ad.swap_last(x), (B * N, T))
    z = ad.linear(z, m.W_in, m.b_in)
    g1 = ad.gelu(ad.linear(z, m.W_mlp1, m.b_mlp1))
    g2 = ad.gelu(ad.linear(g1, m.W_mlp2, m.b_mlp2))
    z_out = ad.add(g2, z)
    y = ad.linear(ad.dropout(z_out, m.dropout_rate, training, rng), m.W_out, m.b_out)
    y = ad.swap_last(ad.reshape(y, (B, N, m.S)))
    if m.use_revin:
        y = revin_denormalize(y, state)
    return ad.reshape(y, (m.S, N)) if single else y
