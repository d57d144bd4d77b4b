"""Dense 2-D float32 tensors: validation, MXTEN1 file I/O, CSV import and
synthetic generation with outlier injection.

A tensor is a plain C-contiguous ``np.ndarray`` of dtype float32 with
``ndim == 2``. Randomness uses numpy's Philox4x64 counter-based generator
seeded through ``SeedSequence`` so generated files are stable across
platforms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DomainError, FormatError, ShapeError, TruncationError

MXTEN1_MAGIC = b"MXTEN1"
_HEADER = struct.Struct("<6sII")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and optional sub-stream ``keys``."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ArgumentError("seeds must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def as_tensor(data, *, name: str = "tensor") -> np.ndarray:
    """Coerce ``data`` to a finite, C-contiguous 2-D float32 array."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite values")
    return arr


def save_tensor(t: np.ndarray, path: str | Path) -> None:
    t = as_tensor(t)
    rows, cols = t.shape
    payload = t.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MXTEN1_MAGIC, rows, cols))
        fh.write(payload)


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than MXTEN1 header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MXTEN1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MXTEN1_MAGIC!r}")
    expected = rows * cols * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise TruncationError(
            f"header declares {rows}x{cols} ({expected} bytes), payload has {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(rows, cols)
    if not np.isfinite(arr).all():
        raise DomainError("payload contains non-finite values")
    return arr


def load_tensor(path: str | Path) -> np.ndarray:
    """Read an MXTEN1 file; the result matches the file bit-exactly."""
    return tensor_from_bytes(Path(path).read_bytes())


def read_csv(path: str | Path) -> np.ndarray:
    """Parse comma-separated decimal floats, one row per line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise FormatError("ragged CSV rows")
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    arr = np.array(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DomainError("CSV contains non-finite values")
    if (np.abs(arr) > np.finfo(np.float32).max).any():
        raise DomainError("CSV value overflows binary32")
    return as_tensor(arr)


def read_any(path: str | Path) -> np.ndarray:
    """Load ``.csv`` through :func:`read_csv`, anything else as MXTEN1."""
    if str(path).lower().endswith(".csv"):
        return read_csv(path)
    return load_tensor(path)


@dataclass(frozen=True)
class OutlierSpec:
    """Parameters of the synthetic outlier structure.

    ``normal_fraction`` of the channels (columns) are scaled by
    ``normal_magnitude`` across all rows; ``massive_count`` individual cells
    are scaled by ``massive_magnitude``.
    """

    normal_fraction: float = 0.0
    normal_magnitude: float = 1.0
    massive_count: int = 0
    massive_magnitude: float = 1.0
    base_distribution: str = "standard-normal"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.normal_fraction <= 1.0:
            raise ArgumentError("normal_fraction must lie in [0, 1]")
        if self.normal_magnitude < 1 or self.massive_magnitude < 1:
            raise ArgumentError("outlier magnitudes must be >= 1")
        if self.massive_count < 0:
            raise ArgumentError("massive_count must be non-negative")
        if self.base_distribution not in ("standard-normal", "uniform-symmetric"):
            raise ArgumentError(f"unknown base distribution {self.base_distribution!r}")


@dataclass(frozen=True)
class Injection:
    """Where outliers were injected by :func:`generate_tensor_detailed`."""

    normal_channels: tuple[int, ...]
    massive_cells: tuple[tuple[int, int], ...]


def generate_tensor_detailed(rows: int, cols: int, spec: OutlierSpec) -> tuple[np.ndarray, Injection]:
    if rows < 0 or cols < 0:
        raise ArgumentError("rows and cols must be non-negative")
    if spec.massive_count > rows * cols:
        raise ArgumentError(
            f"massive_count {spec.massive_count} exceeds the {rows * cols} available cells"
        )
    rng = make_rng(spec.seed)
    # base draw comes first so that un-injected cells match a no-injection run
    if spec.base_distribution == "standard-normal":
        base = rng.standard_normal((rows, cols))
    else:
        base = rng.uniform(-1.0, 1.0, (rows, cols))
    t = base.astype(np.float32)

    n_channels = int(np.floor(spec.normal_fraction * cols + 0.5))
    channels = np.sort(rng.choice(cols, size=n_channels, replace=False)) if n_channels else np.zeros(0, int)
    if n_channels:
        t[:, channels] *= np.float32(spec.normal_magnitude)

    cells = (
        np.sort(rng.choice(rows * cols, size=spec.massive_count, replace=False))
        if spec.massive_count
        else np.zeros(0, int)
    )
    if spec.massive_count:
        r, c = np.divmod(cells, cols)
        t[r, c] *= np.float32(spec.massive_magnitude)

    injection = Injection(
        normal_channels=tuple(int(c) for c in channels),
        massive_cells=tuple((int(i) // cols, int(i) % cols) for i in cells),
    )
    return as_tensor(t), injection


def generate_tensor(rows: int, cols: int, spec: OutlierSpec) -> np.ndarray:
    """Deterministic synthetic tensor; a pure function of its arguments."""
    return generate_tensor_detailed(rows, cols, spec)[0]
