"""Binary checkpoint format.

Little-endian layout::

    b"GTR1"            magic
    u32                version
    u32 x 6            T, S, N, L, D, P
    u8                 flags: bit0 revin, bit1 gta, bits2-3 variant, bit4 retriever off
    f64                dropout rate
    u64                seed
    f64 ...            parameter buffers in ForecastModel.parameters() order

Retriever buffers (Q, W_align, b_align, fusion weights) are absent when
the retriever is switched off.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import RunConfig
from .model import ForecastModel
from .retriever import VARIANTS

MAGIC = b"GTR1"
VERSION = 1
_HEADER = struct.Struct("<4sI6IBdQ")


class CheckpointError(ValueError):
    pass


def _flags(model: ForecastModel) -> int:
    return (
        int(model.use_revin)
        | int(model.gta) << 1
        | VARIANTS.index(model.variant) << 2
        | int(not model.use_gtr) << 4
    )


def dumps(model: ForecastModel, cfg: RunConfig) -> bytes:
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        model.T,
        model.S,
        model.N,
        model.L,
        model.D,
        model.P,
        _flags(model),
        float(model.dropout_rate),
        cfg.seed & 0xFFFFFFFFFFFFFFFF,
    )
    body = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in model.parameters().values())
    return header + body


def save_checkpoint(model: ForecastModel, cfg: RunConfig, path) -> None:
    Path(path).write_bytes(dumps(model, cfg))


def loads(blob: bytes, base: RunConfig | None = None) -> tuple[ForecastModel, RunConfig]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"truncated header: expected {_HEADER.size} bytes, got {len(blob)}")
    _, version, T, S, N, L, D, P, flags, dropout, seed = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    tag = (flags >> 2) & 0b11
    if flags >> 5:
        raise CheckpointError(f"unknown flag bits in {flags:#04x}")
    cfg = (base or RunConfig()).replace(
        T=T,
        S=S,
        N=N,
        L=L,
        D=D,
        P=P,
        use_revin=bool(flags & 1),
        gta_enabled=bool(flags & 2),
        variant=VARIANTS[tag],
        use_gtr=not (flags & 16),
        dropout_rate=dropout,
        seed=seed if seed < 2**63 else seed - 2**64,
    )
    model = ForecastModel(
        T,
        S,
        N,
        L,
        P,
        D,
        use_revin=cfg.use_revin,
        use_gtr=cfg.use_gtr,
        variant=cfg.variant,
        gta=cfg.gta_enabled,
        dropout_rate=dropout,
        revin_eps=cfg.revin_eps,
    )
    params = model.parameters()
    expected = _HEADER.size + 8 * sum(p.size for p in params.values())
    if len(blob) != expected:
        kind = "truncated" if len(blob) < expected else "oversized"
        raise CheckpointError(f"{kind} checkpoint: expected {expected} bytes, got {len(blob)}")
    offset = _HEADER.size
    for p in params.values():
        n = p.size
        p.data = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(p.shape)
        offset += 8 * n
    return model, cfg


def load_checkpoint(path, base: RunConfig | None = None) -> tuple[ForecastModel, RunConfig]:
    """Rebuild the model; ``base`` supplies the config fields not in the header."""
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"no such checkpoint: {p}")
    return loads(p.read_bytes(), base)
