"""MXFP4 block quantization (E2M1 elements, E8M0 shared scales) and the
uniform integer quantizer.

FP4 code layout: bit 3 is the sign, bits 2..0 index the magnitude grid
``0, 0.5, 1, 1.5, 2, 3, 4, 6``. Even magnitude indices have mantissa bit 0,
which is what ties resolve towards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError, TruncationError
from .tensor import as_tensor

FP4_MAGNITUDES = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0], dtype=np.float32)
FP4_VALUES = np.concatenate([FP4_MAGNITUDES, -FP4_MAGNITUDES])
FP4_MAX = 6.0
# exponent of the largest element (6 = 1.5 * 2**2)
ELEMENT_EMAX = 2
SCALE_EXP_MIN, SCALE_EXP_MAX = -127, 127
DEFAULT_GROUP_SIZE = 32

# Midpoints between consecutive grid magnitudes. A value exactly on a
# midpoint goes up only when the upper neighbour has the even mantissa.
_MIDPOINTS = (FP4_MAGNITUDES[:-1] + FP4_MAGNITUDES[1:]) / 2
_TIE_GOES_UP = (np.arange(1, 8) % 2) == 0


def fp4_encode(values) -> np.ndarray:
    """Round each value to the nearest FP4 grid point and return its code.

    Magnitudes above 6 clamp to 6. The sign bit follows ``np.signbit`` so
    ``-0.0`` and small negatives that round to zero produce the ``-0`` code.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise DomainError("cannot encode non-finite value")
    mag = np.abs(v)
    idx = np.zeros(v.shape, dtype=np.uint8)
    for mid, up in zip(_MIDPOINTS, _TIE_GOES_UP):
        idx += (mag >= mid) if up else (mag > mid)
    return idx | (np.signbit(v).astype(np.uint8) << 3)


def fp4_decode(codes) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > 15):
        raise DomainError("FP4 codes must lie in [0, 15]")
    return FP4_VALUES[codes.astype(np.intp)]


def fp4_nearest(v: float) -> int:
    """Code of the FP4 value nearest to ``v`` (ties to even mantissa)."""
    return int(fp4_encode(v))


def scale_exponent(amax) -> np.ndarray:
    """E8M0 exponent ``floor(log2(amax)) - 2`` clamped to [-127, 127]; 0 for amax == 0."""
    amax = np.asarray(amax, dtype=np.float64)
    # frexp gives amax = m * 2**k with m in [0.5, 1), so floor(log2 amax) = k - 1
    _, k = np.frexp(amax)
    exp = np.clip(k.astype(np.int64) - 1 - ELEMENT_EMAX, SCALE_EXP_MIN, SCALE_EXP_MAX)
    return np.where(amax == 0, 0, exp).astype(np.int8)


def block_scale(block) -> int:
    """Shared E8M0 scale exponent of one block."""
    block = np.asarray(block, dtype=np.float64)
    if not np.isfinite(block).all():
        raise DomainError("block contains non-finite values")
    return int(scale_exponent(np.abs(block).max(initial=0.0)))


def quantize_block(block) -> tuple[int, np.ndarray]:
    """Return ``(scale_exponent, codes)`` for one block."""
    block = np.asarray(block, dtype=np.float64)
    exp = block_scale(block)
    return exp, fp4_encode(np.ldexp(block, -exp))


def dequantize_block(exponent: int, codes) -> np.ndarray:
    return np.ldexp(fp4_decode(codes), int(exponent)).astype(np.float32)


@dataclass(frozen=True, eq=False)
class MxQuantizedTensor:
    """MXFP4 tensor: one int8 exponent per group and one FP4 code per element.

    ``scales`` has shape ``(rows, cols // group_size)`` and ``codes`` has
    shape ``(rows, cols)``; packing into nibbles happens only on
    serialization (see :meth:`packed_codes`).
    """

    rows: int
    cols: int
    group_size: int
    scales: np.ndarray
    codes: np.ndarray

    @property
    def num_groups(self) -> int:
        return self.scales.size

    def group_scales(self) -> np.ndarray:
        """Scale values ``2**e`` as float64, shape ``(rows, groups_per_row)``."""
        return np.ldexp(1.0, self.scales.astype(np.int64))

    def packed_codes(self) -> bytes:
        return pack_nibbles(self.codes.reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, MxQuantizedTensor):
            return NotImplemented
        return (
            (self.rows, self.cols, self.group_size) == (other.rows, other.cols, other.group_size)
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.codes, other.codes)
        )


def pack_nibbles(codes) -> bytes:
    """Two codes per byte, low nibble first; odd counts get a zero pad nibble."""
    codes = np.asarray(codes, dtype=np.uint8).reshape(-1)
    if codes.size % 2:
        codes = np.append(codes, np.uint8(0))
    return (codes[0::2] | (codes[1::2] << 4)).astype(np.uint8).tobytes()


def unpack_nibbles(raw: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    out = np.empty(b.size * 2, dtype=np.uint8)
    out[0::2] = b & 0x0F
    out[1::2] = b >> 4
    return out[:count]


def _check_groups(cols: int, group_size: int) -> None:
    if group_size <= 0:
        raise ShapeError("group_size must be positive")
    if cols % group_size:
        raise ShapeError(f"cols={cols} is not divisible by group_size={group_size}")


def quantize_tensor_mx(t, group_size: int = DEFAULT_GROUP_SIZE) -> MxQuantizedTensor:
    """Quantize each contiguous row segment of ``group_size`` elements."""
    t = as_tensor(t)
    rows, cols = t.shape
    _check_groups(cols, group_size)
    groups = t.astype(np.float64).reshape(rows, cols // group_size, group_size)
    exps = scale_exponent(np.abs(groups).max(axis=2, initial=0.0))
    scaled = np.ldexp(groups, -exps.astype(np.int64)[..., None])
    codes = fp4_encode(scaled).reshape(rows, cols)
    return MxQuantizedTensor(rows, cols, group_size, exps, codes)


def dequantize_tensor_mx(q: MxQuantizedTensor) -> np.ndarray:
    vals = fp4_decode(q.codes).astype(np.float64)
    groups = vals.reshape(q.rows, q.cols // q.group_size, q.group_size)
    out = np.ldexp(groups, q.scales.astype(np.int64)[..., None])
    return out.reshape(q.rows, q.cols).astype(np.float32)


def fake_quantize_mx(t, group_size: int = DEFAULT_GROUP_SIZE) -> np.ndarray:
    """Quantize then dequantize."""
    return dequantize_tensor_mx(quantize_tensor_mx(t, group_size))


# -- MXQ4 files ---------------------------------------------------------------

MXQ4_MAGIC = b"MXQ4"
_MXQ4_HEADER = struct.Struct("<4sIII")


def mxq4_to_bytes(q: MxQuantizedTensor) -> bytes:
    return (
        _MXQ4_HEADER.pack(MXQ4_MAGIC, q.rows, q.cols, q.group_size)
        + q.scales.astype(np.int8).tobytes()
        + q.packed_codes()
    )


def mxq4_from_bytes(raw: bytes) -> MxQuantizedTensor:
    if len(raw) < _MXQ4_HEADER.size:
        raise FormatError("file shorter than MXQ4 header")
    magic, rows, cols, group_size = _MXQ4_HEADER.unpack_from(raw)
    if magic != MXQ4_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MXQ4_MAGIC!r}")
    if group_size == 0 or cols % group_size:
        raise FormatError(f"cols={cols} not divisible by group_size={group_size}")
    n_groups = rows * cols // group_size
    n_code_bytes = (rows * cols + 1) // 2
    body = raw[_MXQ4_HEADER.size:]
    if len(body) != n_groups + n_code_bytes:
        raise TruncationError(
            f"expected {n_groups + n_code_bytes} payload bytes, found {len(body)}"
        )
    scales = np.frombuffer(body[:n_groups], dtype=np.int8).reshape(rows, cols // group_size).copy()
    if (scales == -128).any():
        raise FormatError("scale exponent -128 is outside the E8M0 range used here")
    codes = unpack_nibbles(body[n_groups:], rows * cols).reshape(rows, cols)
    return MxQuantizedTensor(rows, cols, group_size, scales, codes)


def save_mxq4(q: MxQuantizedTensor, path: str | Path) -> None:
    Path(path).write_bytes(mxq4_to_bytes(q))


def load_mxq4(path: str | Path) -> MxQuantizedTensor:
    return mxq4_from_bytes(Path(path).read_bytes())


# -- uniform integer quantization ---------------------------------------------

@dataclass(frozen=True)
class IntQuantParams:
    bits: int
    step: float
    zero_point: int


def int_uniform_quantize(t, bits: int) -> tuple[IntQuantParams, np.ndarray]:
    """Asymmetric per-tensor quantization to ``bits``-bit unsigned integers.

    ``step = (max - min) / (2**bits - 1)`` and ``zero_point = -round(min / step)``;
    rounding is half-to-even. A constant tensor ``c`` uses ``step = |c|`` (1 for
    c == 0) so that it reconstructs exactly.
    """
    if bits < 2:
        raise DomainError("bits must be >= 2")
    x = np.asarray(t, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DomainError("tensor contains non-finite values")
    qmax = 2**bits - 1
    if x.size == 0:
        return IntQuantParams(bits, 1.0, 0), np.zeros(x.shape, dtype=np.int64)
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        step = abs(lo) or 1.0
        zero = 1 if lo < 0 else 0
        codes = np.full(x.shape, 0 if lo <= 0 else 1, dtype=np.int64)
        return IntQuantParams(bits, step, zero), codes
    step = (hi - lo) / qmax
    zero = int(-np.rint(lo / step))
    codes = np.clip(np.rint(x / step) + zero, 0, qmax).astype(np.int64)
    return IntQuantParams(bits, step, zero), codes


def int_uniform_dequantize(params: IntQuantParams, codes) -> np.ndarray:
    return (np.asarray(codes, dtype=np.float64) - params.zero_point) * params.step
