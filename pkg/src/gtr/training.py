"""Adam training loop with best-validation selection."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .analysis import mae, mse
from .config import RunConfig
from .data import TimeSeriesDataset, make_batches
from .model import ForecastModel, model_forward

log = logging.getLogger(__name__)

# substream purposes
INIT, SHUFFLE, DROPOUT = 0, 1, 2


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}" + (f": {detail}" if detail else ""))


def substream(seed: int, purpose: int, epoch: int = 0) -> np.random.Generator:
    """Independent generator keyed by (seed, purpose, epoch)."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, purpose, epoch]))


def subseed(seed: int, purpose: int, epoch: int = 0) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, purpose, epoch]).generate_state(1)[0])


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params[k].data``.

    ``params`` maps names to tensors; ``grads`` maps the same names to
    arrays (a missing or ``None`` gradient counts as zero).
    """
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.data.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def build_model(cfg: RunConfig, n_channels: int | None = None) -> ForecastModel:
    N = n_channels or cfg.N
    if N < 1:
        raise ValueError("number of channels unknown: set cfg.N or pass n_channels")
    return ForecastModel(
        cfg.T,
        cfg.S,
        N,
        cfg.L,
        cfg.P,
        cfg.D,
        use_revin=cfg.use_revin,
        use_gtr=cfg.use_gtr,
        variant=cfg.variant,
        gta=cfg.gta_enabled,
        dropout_rate=cfg.dropout_rate,
        revin_eps=cfg.revin_eps,
        rng=substream(cfg.seed, INIT),
    )


def evaluate(model: ForecastModel, ds: TimeSeriesDataset, split: str, batch_size: int = 1024) -> tuple[float, float]:
    """Eval-mode MSE and MAE over every window of ``split`` (standardized space)."""
    pred, target, _ = predict_split(model, ds, split, batch_size)
    return mse(pred, target), mae(pred, target)


def predict_split(model: ForecastModel, ds: TimeSeriesDataset, split: str, batch_size: int = 1024):
    preds, targets, starts = [], [], []
    for batch in make_batches(ds, split, model.T, model.S, batch_size):
        preds.append(model_forward(model, batch.inputs, batch.start_positions).data)
        targets.append(batch.targets)
        starts.append(batch.start_positions)
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(starts)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    test_mse: float = float("nan")
    test_mae: float = float("nan")
    wall_time: float = 0.0
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_mae": self.val_mae,
            "best_epoch": self.best_epoch,
            "test_mse": self.test_mse,
            "test_mae": self.test_mae,
            "wall_time": self.wall_time,
            "stopped_early": self.stopped_early,
        }


def train(
    model: ForecastModel,
    ds: TimeSeriesDataset,
    cfg: RunConfig,
    *,
    lr_for_epoch: Callable[[int], float] | None = None,
    on_epoch: Callable[[int, float, float, float], None] | None = None,
) -> TrainReport:
    """Fit ``model`` on the train split, select by validation MSE, score on test.

    ``lr_for_epoch`` overrides the constant learning rate per epoch (test
    harness hook); ``on_epoch(epoch, train_loss, val_mse, val_mae)`` runs after
    each epoch.
    """
    if ds.num_channels != model.N:
        raise ValueError(f"dataset has {ds.num_channels} channels, model expects {model.N}")
    start = time.perf_counter()
    report = TrainReport()
    params = model.parameters()
    adam = AdamState(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    best_val = np.inf
    best_state = model.state_arrays()
    since_best = 0

    for epoch in range(cfg.epochs):
        lr = cfg.lr if lr_for_epoch is None else lr_for_epoch(epoch)
        drop_rng = substream(cfg.seed, DROPOUT, epoch)
        total = 0.0
        n_windows = 0
        batches = make_batches(ds, "train", model.T, model.S, cfg.batch_size, shuffle_seed=subseed(cfg.seed, SHUFFLE, epoch))
        for b, batch in enumerate(batches):
            try:
                pred = model_forward(model, batch.inputs, batch.start_positions, training=True, rng=drop_rng)
                loss = ad.mse_loss(pred, ad.tensor(batch.targets))
                ad.backward(loss)
                adam_step(params, {k: p.grad for k, p in params.items()}, adam, lr)
            except ad.NonFiniteError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            finally:
                model.zero_grad()
            if not np.all([np.all(np.isfinite(p.data)) for p in params.values()]):
                raise TrainingDivergedError(epoch, b, "parameters became non-finite")
            total += loss.item() * len(batch)
            n_windows += len(batch)
        train_loss = total / n_windows
        try:
            val_loss, val_mae = evaluate(model, ds, "val")
        except ad.NonFiniteError as exc:
            raise TrainingDivergedError(epoch, -1, f"validation: {exc}") from exc
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.val_mae.append(val_mae)
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss, val_mae)
        if val_loss < best_val:
            best_val = val_loss
            report.best_epoch = epoch
            best_state = model.state_arrays()
            since_best = 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                report.stopped_early = True
                break

    model.load_arrays(best_state)
    report.test_mse, report.test_mae = evaluate(model, ds, "test")
    report.wall_time = time.perf_counter() - start
    return report
