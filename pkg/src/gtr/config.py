"""Run configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, get_type_hints

from .retriever import VARIANTS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data: str = ""
    dataset: str = ""
    split: tuple[int, int, int] | None = None
    train_ratio: float = 0.7
    val_ratio: float = 0.1
    # geometry
    T: int = 96
    S: int = 96
    N: int = 0  # 0 = take from the data
    L: int = 24
    P: int = 24
    D: int = 512
    # model switches
    use_revin: bool = True
    use_gtr: bool = True
    variant: str = "conv2d"
    gta_enabled: bool = False
    dropout_rate: float = 0.1
    revin_eps: float = 1e-5
    # optimisation
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    seed: int = 2025
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("T", "S", "L", "P", "D", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.N < 0 or self.epochs < 0:
            raise ConfigError("N and epochs must be non-negative")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        if self.split is not None:
            out["split"] = list(self.split)
        return out

    def dumps(self) -> str:
        """Serialize to the flat text format (round-trips through :func:`parse_config`)."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_HINTS = get_type_hints(RunConfig)
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    hint = _HINTS[key]
    raw = raw.strip()
    try:
        if key == "split":
            if raw.lower() in ("", "none"):
                return None
            parts = tuple(int(p) for p in raw.replace(" ", "").split(","))
            if len(parts) != 3:
                raise ValueError("split needs three comma-separated lengths")
            return parts
        if key == "patience":
            return None if raw.lower() in ("", "none") else int(raw)
        if hint is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_pairs(pairs) -> dict[str, Any]:
    """Parse ``key=value`` strings into typed values."""
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        out[k] = _coerce(k, v)
    return out


def parse_config(text: str) -> dict[str, Any]:
    lines = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        lines.append(line)
    return parse_pairs(lines)


def load_config(path=None, overrides=()) -> RunConfig:
    """File values first, then ``overrides`` (``key=value`` strings) on top."""
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config(p.read_text(encoding="utf-8")))
    values.update(parse_pairs(overrides))
    return RunConfig(**values)


# Per-dataset settings; T = 96 throughout, S chosen per run.
PRESETS: dict[str, dict[str, Any]] = {
    "ETTh1": dict(L=24, lr=1e-3, batch_size=256, epochs=30, use_revin=True, split=(8545, 2881, 2881)),
    "ETTh2": dict(L=24, lr=1e-3, batch_size=256, epochs=30, use_revin=True, split=(8545, 2881, 2881)),
    "ETTm1": dict(L=96, lr=1e-3, batch_size=256, epochs=30, use_revin=True, split=(34465, 11521, 11521)),
    "ETTm2": dict(L=96, lr=1e-3, batch_size=256, epochs=30, use_revin=True, split=(34465, 11521, 11521)),
    "Weather": dict(L=144, lr=1e-3, batch_size=64, epochs=30, use_revin=True, split=(36792, 5271, 10540)),
    "Traffic": dict(L=168, lr=3e-3, batch_size=16, epochs=30, use_revin=True, split=(12185, 1757, 3509)),
    "Electricity": dict(L=168, lr=3e-3, batch_size=32, epochs=30, use_revin=True, split=(18317, 2633, 5261)),
    "Solar": dict(L=144, lr=3e-3, batch_size=64, epochs=30, use_revin=False, split=(36601, 5161, 10417)),
    "PEMS03": dict(L=288, lr=3e-3, batch_size=32, epochs=30, use_revin=False, split=(15617, 5135, 5135)),
    "PEMS04": dict(L=288, lr=3e-3, batch_size=32, epochs=30, use_revin=False, split=(10172, 3375, 3375)),
    "PEMS07": dict(L=288, lr=3e-3, batch_size=32, epochs=30, use_revin=False, split=(16911, 5622, 5622)),
    "PEMS08": dict(L=288, lr=3e-3, batch_size=32, epochs=30, use_revin=True, split=(10690, 3548, 265)),
}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"no preset for {name!r}; known: {sorted(PRESETS)}")
    return RunConfig(dataset=name, **{**PRESETS[name], **overrides})
