import struct

import numpy as np
import pytest

from gtr.checkpoint import MAGIC, CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from gtr.config import RunConfig
from gtr.model import model_forward
from gtr.retriever import VARIANTS
from gtr.training import build_model


def make(variant="conv2d", **kw):
    cfg = RunConfig(T=10, S=4, N=3, L=7, P=4, D=6, variant=variant, seed=99, **kw)
    model = build_model(cfg)
    rng = np.random.default_rng(0)
    for p in model.parameters().values():
        p.data = rng.normal(size=p.shape)
    return model, cfg


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("flags", [{}, {"use_revin": False}, {"gta_enabled": True}, {"use_gtr": False}])
def test_round_trip_byte_exact(variant, flags, tmp_path):
    model, cfg = make(variant, **flags)
    path = tmp_path / "m.gtr"
    save_checkpoint(model, cfg, path)
    loaded, cfg2 = load_checkpoint(path)
    assert dumps(loaded, cfg2) == path.read_bytes()
    assert (cfg2.use_revin, cfg2.use_gtr, cfg2.gta_enabled, cfg2.variant, cfg2.seed) == (
        cfg.use_revin,
        cfg.use_gtr,
        cfg.gta_enabled,
        cfg.variant,
        cfg.seed,
    )
    x = np.random.default_rng(1).normal(size=(5, 10, 3))
    t0 = np.arange(5) * 3
    diff = model_forward(model, x, t0).data - model_forward(loaded, x, t0).data
    assert np.max(np.abs(diff)) == 0.0


def test_header_layout():
    model, cfg = make()
    blob = dumps(model, cfg)
    magic, version, T, S, N, L, D, P, flags, dropout, seed = struct.unpack_from("<4sI6IBdQ", blob)
    assert (magic, version, T, S, N, L, D, P) == (b"GTR1", 1, 10, 4, 3, 7, 6, 4)
    assert flags == 0b00001 and dropout == 0.1 and seed == 99
    first = np.frombuffer(blob, "<f8", count=model.gtr.Q.size, offset=struct.calcsize("<4sI6IBdQ"))
    np.testing.assert_array_equal(first, model.gtr.Q.data.ravel())
    assert len(blob) == struct.calcsize("<4sI6IBdQ") + 8 * model.num_parameters()


def test_truncated_reports_sizes():
    model, cfg = make()
    blob = dumps(model, cfg)
    with pytest.raises(CheckpointError, match=rf"expected {len(blob)} bytes, got {len(blob) - 8}"):
        loads(blob[:-8])
    with pytest.raises(CheckpointError, match="oversized"):
        loads(blob + b"\0" * 8)
    with pytest.raises(CheckpointError, match="truncated header"):
        loads(blob[:10])


def test_bad_magic_rejected_first():
    model, cfg = make()
    blob = b"XXXX" + dumps(model, cfg)[4:12]  # also truncated; magic must win
    with pytest.raises(CheckpointError, match="magic"):
        loads(blob)
    assert MAGIC == b"GTR1"


def test_version_and_flags():
    model, cfg = make()
    blob = bytearray(dumps(model, cfg))
    blob[4:8] = struct.pack("<I", 2)
    with pytest.raises(CheckpointError, match="version"):
        loads(bytes(blob))
    blob = bytearray(dumps(model, cfg))
    blob[32] |= 0b1000_0000
    with pytest.raises(CheckpointError, match="flag"):
        loads(bytes(blob))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="nope"):
        load_checkpoint(tmp_path / "nope.gtr")
