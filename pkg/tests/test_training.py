import math

import numpy as np
import pytest

from gtr import autodiff as ad
from gtr.config import RunConfig
from gtr.data import SplitSpec, TimeSeriesDataset, make_batches
from gtr.synth import SynthParams, generate
from gtr.training import (
    DROPOUT,
    INIT,
    SHUFFLE,
    AdamState,
    TrainingDivergedError,
    adam_step,
    build_model,
    evaluate,
    substream,
    subseed,
    train,
)


@pytest.fixture(scope="module")
def cycle_ds():
    v = generate("global-cycle", SynthParams(length=1500, channels=2, cycle=48, period=12, noise=0.1, seed=3))
    return TimeSeriesDataset.from_array(v, SplitSpec(24, 12))


def small_cfg(**kw):
    base = dict(T=24, S=12, L=48, P=12, D=32, lr=3e-3, epochs=5, batch_size=32, seed=7)
    return RunConfig(**{**base, **kw})


# --- adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = {"w": ad.parameter([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    adam_step(p, {"w": None}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_closed_form():
    p = {"t": ad.parameter([0.0])}
    adam_step(p, {"t": np.array([1.0])}, AdamState(), 0.1)
    assert p["t"].data[0] == pytest.approx(-0.1, abs=1e-8)


def test_adam_matches_scalar_trace():
    p = {"t": ad.parameter([1.0])}
    state = AdamState()
    for _ in range(5):
        adam_step(p, {"t": 2 * p["t"].data}, state, 0.01)
    theta, m, v = 1.0, 0.0, 0.0
    for t in range(1, 6):
        g = 2 * theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(p["t"].data[0] - theta) < 1e-12
    assert state.t == 5


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": ad.parameter([1.0])}, {"w": np.zeros(2)}, AdamState(), 0.1)


# --- rng substreams ---------------------------------------------------------


def test_substreams_are_distinct_and_stable():
    seeds = {subseed(5, purpose, epoch) for purpose in (INIT, SHUFFLE, DROPOUT) for epoch in range(3)}
    assert len(seeds) == 9
    assert substream(5, DROPOUT, 2).random() == substream(5, DROPOUT, 2).random()


def test_build_model_deterministic():
    cfg = small_cfg()
    a, b = build_model(cfg, 2), build_model(cfg, 2)
    for x, y in zip(a.state_arrays().values(), b.state_arrays().values()):
        assert x.tobytes() == y.tobytes()
    with pytest.raises(ValueError):
        build_model(cfg.replace(N=0))


# --- train ------------------------------------------------------------------


def test_zero_epochs_evaluates_untrained(cycle_ds):
    cfg = small_cfg(epochs=0)
    model = build_model(cfg, 2)
    before = evaluate(model, cycle_ds, "test")
    report = train(model, cycle_ds, cfg)
    assert report.train_loss == [] and report.best_epoch is None
    assert (report.test_mse, report.test_mae) == before


def test_loss_decreases_and_deterministic(cycle_ds):
    cfg = small_cfg(epochs=8)
    r1 = train(build_model(cfg, 2), cycle_ds, cfg)
    r2 = train(build_model(cfg, 2), cycle_ds, cfg)
    first = r1.train_loss[:5]
    assert all(b < a for a, b in zip(first, first[1:]))
    assert r1.train_loss[-1] < 0.5 * r1.train_loss[0]
    assert r1.train_loss == r2.train_loss
    assert r1.val_loss == r2.val_loss
    assert (r1.test_mse, r1.test_mae) == (r2.test_mse, r2.test_mae)


def test_best_val_restored_after_spike(cycle_ds):
    cfg = small_cfg(epochs=4)
    model = build_model(cfg, 2)
    snaps = []
    report = train(
        model,
        cycle_ds,
        cfg,
        lr_for_epoch=lambda e: 0.5 if e == 3 else 3e-3,
        on_epoch=lambda *a: snaps.append(model.state_arrays()),
    )
    assert report.val_loss[3] > min(report.val_loss[:3])
    assert report.best_epoch == int(np.argmin(report.val_loss))
    for k, v in model.state_arrays().items():
        np.testing.assert_array_equal(v, snaps[report.best_epoch][k])
    assert (report.test_mse, report.test_mae) == evaluate(model, cycle_ds, "test")


def test_patience_stops_early(cycle_ds):
    cfg = small_cfg(epochs=6, patience=1)
    report = train(build_model(cfg, 2), cycle_ds, cfg, lr_for_epoch=lambda e: 3e-3 if e == 0 else 0.5)
    assert report.stopped_early
    assert len(report.val_loss) < 6


def test_nan_abort_reports_coordinates(cycle_ds):
    cfg = small_cfg(epochs=2)
    with pytest.raises(TrainingDivergedError) as info, np.errstate(all="ignore"):
        train(build_model(cfg, 2), cycle_ds, cfg, lr_for_epoch=lambda e: 1e300)
    assert info.value.epoch == 0
    assert info.value.batch >= 0
    assert "epoch 0" in str(info.value)


def test_channel_mismatch(cycle_ds):
    cfg = small_cfg()
    with pytest.raises(ValueError):
        train(build_model(cfg, 3), cycle_ds, cfg)


def test_dropout_does_not_perturb_shuffle(cycle_ds, monkeypatch):
    import gtr.training as training

    seen = []

    def spy(*args, **kw):
        seen.append(kw.get("shuffle_seed"))
        return make_batches(*args, **kw)

    monkeypatch.setattr(training, "make_batches", spy)
    runs = []
    for rate in (0.0, 0.3):
        seen.clear()
        cfg = small_cfg(epochs=2, dropout_rate=rate)
        runs.append((train(build_model(cfg, 2), cycle_ds, cfg).train_loss, [s for s in seen if s is not None]))
    assert runs[0][1] == runs[1][1] == [subseed(7, SHUFFLE, 0), subseed(7, SHUFFLE, 1)]
    assert runs[0][0] != runs[1][0]
