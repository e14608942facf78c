"""CSV ingestion, train-only standardization and sliding-window batches.

Row 0 of the file is absolute time 0; every window carries the absolute
row index of its first input step so the retriever can place it inside
the global cycle.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

Split = Literal["train", "val", "test"]


class DataError(ValueError):
    """Malformed input data or an impossible split/window request."""


@dataclass(frozen=True)
class SplitSpec:
    """How to cut a series into train/val/test plus the window geometry.

    Either give ``lengths`` (explicit train/val/test row counts, starting at
    row 0) or ``ratios`` (train, val) fractions; the test split then takes
    the remaining rows.
    """

    lookback: int
    horizon: int
    lengths: tuple[int, int, int] | None = None
    ratios: tuple[float, float] = (0.7, 0.1)

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise DataError(f"lookback and horizon must be >= 1, got {self.lookback}, {self.horizon}")
        if self.lengths is not None and any(n <= 0 for n in self.lengths):
            raise DataError(f"explicit split lengths must be positive, got {self.lengths}")
        tr, va = self.ratios
        if self.lengths is None and not (0 < tr and 0 <= va and tr + va < 1):
            raise DataError(f"invalid split ratios {self.ratios}")

    def resolve(self, num_steps: int) -> tuple[int, int, int]:
        if self.lengths is not None:
            lengths = tuple(int(n) for n in self.lengths)
            if sum(lengths) > num_steps:
                raise DataError(f"split {lengths} needs {sum(lengths)} rows, data has {num_steps}")
            return lengths  # type: ignore[return-value]
        train = math.floor(num_steps * self.ratios[0])
        val = math.floor(num_steps * self.ratios[1])
        test = num_steps - train - val
        if min(train, val, test) <= 0:
            raise DataError(f"ratios {self.ratios} leave an empty split for {num_steps} rows")
        return train, val, test


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass(frozen=True)
class WindowBatch:
    inputs: np.ndarray  # (B, T, N)
    targets: np.ndarray  # (B, S, N)
    start_positions: np.ndarray  # (B,) absolute row of inputs[b, 0]

    def __len__(self) -> int:
        return len(self.start_positions)


@dataclass
class TimeSeriesDataset:
    """Raw observation matrix (time x channels) with resolved splits."""

    values: np.ndarray
    channel_names: list[str]
    train_len: int
    val_len: int
    test_len: int
    standardizer: Standardizer = field(init=False)
    digest: str = ""
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D (time x channels), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite value at row {r}, column {c}")
        if min(self.train_len, self.val_len, self.test_len) <= 0:
            raise DataError("train, val and test splits must all be non-empty")
        if self.train_len + self.val_len + self.test_len > self.num_steps:
            raise DataError("split lengths exceed the number of rows")
        train = self.values[: self.train_len]
        mean = train.mean(axis=0)
        std = train.std(axis=0)  # population (ddof=0)
        if np.any(std == 0):
            bad = [self.channel_names[i] for i in np.flatnonzero(std == 0)]
            raise DataError(f"constant channel(s) in train split: {bad}")
        self.standardizer = Standardizer(mean, std)
        self.values.setflags(write=False)
        self._scaled = self.standardizer.transform(self.values)
        self._scaled.setflags(write=False)

    @classmethod
    def from_array(cls, values, spec: SplitSpec, channel_names=None, name: str = "") -> TimeSeriesDataset:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        names = list(channel_names) if channel_names is not None else [f"c{i}" for i in range(values.shape[1])]
        train, val, test = spec.resolve(values.shape[0])
        digest = hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()
        return cls(values, names, train, val, test, digest=digest, name=name)

    @property
    def num_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def scaled(self) -> np.ndarray:
        """Values standardized with the train-split statistics."""
        return self._scaled

    def bounds(self, split: Split) -> tuple[int, int]:
        """Row range ``[lo, hi)`` whose rows may appear as targets."""
        a = self.train_len
        b = a + self.val_len
        c = b + self.test_len
        try:
            return {"train": (0, a), "val": (a, b), "test": (b, c)}[split]
        except KeyError:
            raise DataError(f"unknown split {split!r}") from None

    def window_starts(self, split: Split, lookback: int, horizon: int) -> np.ndarray:
        """Absolute start rows of every stride-1 window of ``split``.

        Val/test windows reach back up to ``lookback`` rows into the
        preceding split; their targets always stay inside ``split``.
        """
        lo, hi = self.bounds(split)
        first = 0 if split == "train" else max(lo - lookback, 0)
        last = hi - lookback - horizon
        if last < first:
            raise DataError(
                f"{split} split rows [{lo}, {hi}) cannot hold a window of "
                f"lookback {lookback} + horizon {horizon}"
            )
        return np.arange(first, last + 1)

    def window(self, start: int, lookback: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        x = self._scaled[start : start + lookback]
        y = self._scaled[start + lookback : start + lookback + horizon]
        return x, y


def read_csv(path) -> tuple[list[str], np.ndarray, str]:
    """Parse a header + numeric CSV into (names, values, sha256 of the bytes).

    A leading ``date`` column is skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such data file: {path}")
    raw = path.read_bytes()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        skip = 1 if header and header[0].strip().lower() == "date" else 0
        names = [h.strip() for h in header[skip:]]
        if not names:
            raise DataError(f"{path}: no value columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            cells = row[skip:]
            if len(cells) != len(names):
                raise DataError(f"{path}: row {lineno} has {len(cells)} value cells, expected {len(names)}")
            parsed = []
            for col, cell in enumerate(cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col + skip + 1}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite cell {cell!r} at row {lineno}, column {col + skip + 1}")
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return names, np.array(rows, dtype=np.float64), hashlib.sha256(raw).hexdigest()


def ingest_csv(path, spec: SplitSpec) -> TimeSeriesDataset:
    """Read a CSV (see :func:`read_csv`) and attach resolved splits."""
    names, values, digest = read_csv(path)
    train, val, test = spec.resolve(values.shape[0])
    return TimeSeriesDataset(values, names, train, val, test, digest=digest, name=Path(path).stem)


def make_batches(
    ds: TimeSeriesDataset,
    split: Split,
    lookback: int,
    horizon: int,
    batch_size: int,
    shuffle_seed: int | None = None,
) -> Iterator[WindowBatch]:
    """Yield window batches for ``split`` in enumeration or seeded order."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    starts = ds.window_starts(split, lookback, horizon)
    if shuffle_seed is not None:
        starts = starts[np.random.default_rng(shuffle_seed).permutation(len(starts))]
    scaled = ds.scaled
    t_idx = np.arange(lookback)
    s_idx = np.arange(lookback, lookback + horizon)
    for i in range(0, len(starts), batch_size):
        sp = starts[i : i + batch_size]
        yield WindowBatch(scaled[sp[:, None] + t_idx], scaled[sp[:, None] + s_idx], sp.copy())


def standardize(values, stats: Standardizer) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != stats.mean.shape[0]:
        raise DataError(f"last axis {values.shape[-1]} does not match {stats.mean.shape[0]} channels")
    return stats.transform(values)


def destandardize(pred, stats: Standardizer) -> np.ndarray:
    """Map standardized predictions back to the data's original units."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[-1] != stats.mean.shape[0]:
        raise DataError(f"last axis {pred.shape[-1]} does not match {stats.mean.shape[0]} channels")
    return stats.inverse(pred)
