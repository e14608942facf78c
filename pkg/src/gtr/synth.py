"""Synthetic series whose global cycle is longer than a typical lookback."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("global-cycle", "sine", "noise")


@dataclass(frozen=True)
class SynthParams:
    length: int = 20_000
    channels: int = 4
    cycle: int = 168  # global cycle L*
    period: int = 24  # local period p*
    noise: float = 0.2
    seed: int = 11
    cycle_amp: float = 1.0
    period_amp: float = 1.0

    def __post_init__(self):
        if self.length < 2 or self.channels < 1:
            raise ValueError("length must be >= 2 and channels >= 1")
        if self.cycle < 1 or self.period < 1:
            raise ValueError("cycle and period must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def generate(kind: str, p: SynthParams) -> np.ndarray:
    """``(length, channels)`` array.

    ``global-cycle``: ``cycle_amp * profile_n[t mod cycle] + period_amp *
    sin(2 pi t / period) + noise``, with one seeded standard-normal profile
    per channel. ``sine`` drops the profile; ``noise`` is pure noise.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown synth kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(p.seed)
    t = np.arange(p.length)
    out = np.zeros((p.length, p.channels))
    if kind == "global-cycle":
        profiles = rng.standard_normal((p.cycle, p.channels))
        out += p.cycle_amp * profiles[t % p.cycle]
    if kind in ("global-cycle", "sine"):
        out += p.period_amp * np.sin(2 * np.pi * (t % p.period) / p.period)[:, None]
    scale = (p.noise or 1.0) if kind == "noise" else p.noise
    if scale > 0:
        out += scale * rng.standard_normal(out.shape)
    return out


def write_csv(values: np.ndarray, path, prefix: str = "ch") -> None:
    """Header row ``date,ch0,ch1,...``; the date column is the integer row index."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + [f"{prefix}{i}" for i in range(values.shape[1])])
        for i, row in enumerate(values):
            w.writerow([i] + [repr(float(v)) for v in row])


def synth_csv(kind: str, p: SynthParams, path) -> np.ndarray:
    values = generate(kind, p)
    write_csv(values, path)
    return values
