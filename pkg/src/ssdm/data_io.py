"""Synthetic ensembles, the binary ensemble format, and experiment configs."""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .rng import RngStream

MAGIC = b"SSDM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")
HEADER_SIZE = _HEADER.size  # 18


class EnsembleFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    _atomic_write(path, data)


def atomic_write_text(path, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def make_cluster_ensemble(n_qubits: int, epsilon: float, count: int, rng: RngStream) -> np.ndarray:
    """States ``normalize(|0...0> + epsilon * xi)``, one derived stream per index.

    ``xi`` has independent N(0, 1) real and imaginary parts.
    """
    if count < 0 or epsilon < 0:
        raise ValueError("need count >= 0 and epsilon >= 0")
    d = 1 << n_qubits
    base = geo.basis_state(d, 0)
    out = np.empty((count, d), dtype=complex)
    for i in range(count):
        out[i] = base + epsilon * rng.derive(i).complex_normal(d)
    return geo.normalize(out) if count else out


def ensemble_bytes(ens: np.ndarray) -> bytes:
    ens = np.asarray(ens, dtype=complex)
    if ens.ndim != 2:
        raise ValueError("ensemble must be a (count, d) array")
    count, d = ens.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, d, count) + ens.astype("<c16").tobytes()


def write_ensemble(path, ens: np.ndarray) -> None:
    atomic_write_bytes(path, ensemble_bytes(ens))


def read_ensemble(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_SIZE:
        raise EnsembleFormatError(path, len(blob), f"truncated header ({len(blob)} of {HEADER_SIZE} bytes)")
    magic, version, d, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise EnsembleFormatError(path, 0, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EnsembleFormatError(path, 4, f"unsupported version {version}")
    if d < 1:
        raise EnsembleFormatError(path, 6, f"invalid dimension {d}")
    expected = HEADER_SIZE + 16 * d * count
    if len(blob) < expected:
        raise EnsembleFormatError(path, len(blob), f"truncated data: expected {expected} bytes")
    if len(blob) > expected:
        raise EnsembleFormatError(path, expected, f"{len(blob) - expected} trailing bytes")
    data = np.frombuffer(blob, dtype="<c16", count=d * count, offset=HEADER_SIZE)
    return data.astype(complex).reshape(count, d)


def write_meta(path, **fields) -> None:
    """Provenance sidecar ``<path>.meta.json``."""
    atomic_write_text(f"{path}.meta.json", json.dumps(fields, indent=2, sort_keys=True))


@dataclass
class ExperimentConfig:
    n_qubits: int = 2
    epsilon: float = 0.1
    pool_size: int = 4096
    eval_count: int = 256
    sigma_min: float = 0.05
    sigma_max: float = 1.0
    horizon: float = 1.0
    n_steps: int = 500
    lambda_ou: float = 0.2
    drift_sign: int = -1
    anchor: str = "uniform"
    train_steps: int = 10_000
    batch: int = 64
    lr: float = 2e-4
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    hidden: int = 512
    phase_augment: bool = True
    log_every: int = 1
    seed: int = 0
    out_dir: str = "."

    def __post_init__(self):
        for name in ("n_qubits", "pool_size", "eval_count", "n_steps", "batch", "hidden", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.train_steps < 0:
            raise ValueError("train_steps must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {sorted(ANCHORS)}")

    @property
    def d(self) -> int:
        return 1 << self.n_qubits

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _uniform(d: int) -> np.ndarray:
    return np.full(d, 1.0 / np.sqrt(d), dtype=complex)


ANCHORS = {"uniform": _uniform, "zero": lambda d: geo.basis_state(d, 0)}


def anchor_state(name: str, d: int) -> np.ndarray:
    return ANCHORS[name](d)


def default_config(n_qubits: int = 2, **overrides) -> ExperimentConfig:
    return ExperimentConfig(n_qubits=n_qubits, **overrides)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"config key {key!r}: expected a boolean, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"config key {key!r}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config key {key!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"config key {key!r}: expected a string, got {value!r}")
    return value


def config_from_dict(doc: dict) -> ExperimentConfig:
    unknown = sorted(set(doc) - set(_FIELD_TYPES))
    if unknown:
        raise ValueError(f"unknown config key {unknown[0]!r}")
    missing = [k for k in _FIELD_TYPES if k not in doc]
    if missing:
        raise ValueError(f"missing config key {missing[0]!r}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in doc.items()})


def save_config(path, cfg: ExperimentConfig) -> None:
    atomic_write_text(path, json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return config_from_dict(doc)
