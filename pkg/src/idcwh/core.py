"""Shared types: training configuration, seeding and the +1/-1 <-> bit convention.

Bit convention: bit 1 stands for +1 and bit 0 for -1, so the Hamming distance
between two codes is ``popcount(a ^ b)``.  ``sign`` maps 0 to +1 everywhere
(encoder outputs, vote sums, center estimates).
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WORD_BITS = 64


class ConfigError(ValueError):
    """Raised for an invalid TrainConfig field or config file entry."""


class ThetaMode(str, enum.Enum):
    COSINE = "cosine"
    INNER = "inner"


@dataclass(frozen=True)
class TrainConfig:
    sigma_sq: float = 4.0
    gamma: float = 1.0
    beta: float = 0.01
    code_length: int = 48
    batch_size: int = 128
    epochs: int = 150
    lr_encoder: float = 1e-2
    lr_centers: float = 5e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 50
    theta_mode: ThetaMode = ThetaMode.COSINE
    seed: int = 0
    # hidden layer widths of the encoder; the input width comes from the data
    hidden_sizes: tuple[int, ...] = (64,)

    @property
    def variant(self) -> str:
        return "IDCWH-Single" if self.gamma == 0 else "IDCWH"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def validate_config(cfg: TrainConfig) -> TrainConfig:
    """Return ``cfg`` unchanged if every field is in range, else raise ConfigError
    naming the first offending field."""
    checks = [
        ("sigma_sq", cfg.sigma_sq > 0, "must be positive"),
        ("gamma", cfg.gamma >= 0, "must be nonnegative"),
        ("beta", cfg.beta >= 0, "must be nonnegative"),
        ("code_length", cfg.code_length >= 1, "must be positive"),
        ("batch_size", cfg.batch_size >= 1, "must be positive"),
        ("epochs", cfg.epochs >= 0, "must be nonnegative"),
        ("lr_encoder", cfg.lr_encoder >= 0, "must be nonnegative"),
        ("lr_centers", cfg.lr_centers >= 0, "must be nonnegative"),
        ("momentum", 0 <= cfg.momentum < 1, "must be in [0, 1)"),
        ("weight_decay", cfg.weight_decay >= 0, "must be nonnegative"),
        ("lr_decay_factor", 0 < cfg.lr_decay_factor <= 1, "must be in (0, 1]"),
        ("lr_decay_every", cfg.lr_decay_every >= 1, "must be positive"),
        ("theta_mode", isinstance(cfg.theta_mode, ThetaMode), "must be COSINE or INNER"),
        ("hidden_sizes", all(h >= 1 for h in cfg.hidden_sizes), "must all be positive"),
    ]
    for name, ok, msg in checks:
        if not ok:
            raise ConfigError(f"{name} {msg}")
    for name in ("sigma_sq", "gamma", "beta", "lr_encoder", "lr_centers", "momentum", "weight_decay"):
        if not np.isfinite(getattr(cfg, name)):
            raise ConfigError(f"{name} must be finite")
    return cfg


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config_value(name: str, raw: str):
    """Convert a textual value for TrainConfig field ``name``."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config field {name!r}")
    raw = raw.strip()
    kind = _FIELD_TYPES[name]
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if name == "theta_mode":
            return ThetaMode(raw.lower())
        if name == "hidden_sizes":
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc
    raise AssertionError(name)


def read_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read a flat ``key=value`` file; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        try:
            values[key.strip()] = parse_config_value(key.strip(), raw)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    cfg = (base or TrainConfig()).replace(**values)
    try:
        return validate_config(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def write_config_file(cfg: TrainConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, ThetaMode):
            value = value.value
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def sign(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1, as int8."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def n_words(code_length: int) -> int:
    return (code_length + WORD_BITS - 1) // WORD_BITS


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack a ``(n, l)`` array of +1/-1 values into ``(n, ceil(l/64))`` uint64 words.

    Bit ``v`` of a code lives in word ``v // 64`` at position ``v % 64``.
    """
    signs = np.atleast_2d(np.asarray(signs))
    n, length = signs.shape
    bits = (signs > 0).astype(np.uint8)
    pad = n_words(length) * WORD_BITS - length
    if pad:
        bits = np.concatenate([bits, np.zeros((n, pad), np.uint8)], axis=1)
    as_bytes = np.packbits(bits, axis=1, bitorder="little")
    return np.ascontiguousarray(as_bytes).view("<u8").astype(np.uint64)


def unpack_signs(words: np.ndarray, code_length: int) -> np.ndarray:
    """Inverse of :func:`pack_signs`; returns int8 +1/-1 of shape ``(n, l)``."""
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    as_bytes = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :code_length]
    return np.where(bits == 1, 1, -1).astype(np.int8)
