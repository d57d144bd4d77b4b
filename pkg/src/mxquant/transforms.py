"""Pre-quantization linear transforms.

Row-vector convention throughout: activations ``X`` (tokens x channels) are
rotated as ``X @ BlockDiag(R, ..., R)`` and the matching weight
``W`` (in x out) as ``BlockDiag(R.T, ..., R.T) @ W``, so the product
``X @ W`` is unchanged in exact arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ArgumentError, FormatError, ShapeError
from .tensor import as_tensor, make_rng

DEFAULT_ALPHA = 0.5
DEFAULT_MAX_STEPS = 128


# -- smoothing ------------------------------------------------------------------

@dataclass(frozen=True)
class CalibStats:
    channel_absmax: np.ndarray
    weight_absmax: np.ndarray


@dataclass(frozen=True)
class SmoothScale:
    lam: np.ndarray
    alpha: float

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        if lam.ndim != 1 or not (np.isfinite(lam).all() and (lam > 0).all()):
            raise ArgumentError("smoothing factors must be a vector of finite positive values")
        object.__setattr__(self, "lam", lam)

    @classmethod
    def identity(cls, n: int) -> SmoothScale:
        return cls(np.ones(n), 1.0)


def collect_calib_stats(X, W) -> CalibStats:
    X, W = as_tensor(X, name="X"), as_tensor(W, name="W")
    if X.shape[1] != W.shape[0]:
        raise ShapeError(f"X has {X.shape[1]} channels but W has {W.shape[0]} rows")
    return CalibStats(
        channel_absmax=np.abs(X).max(axis=0, initial=0.0).astype(np.float64),
        weight_absmax=np.abs(W).max(axis=1, initial=0.0).astype(np.float64),
    )


def compute_smooth_scale(stats: CalibStats, alpha: float = DEFAULT_ALPHA) -> SmoothScale:
    """Per-channel ``absmax(X_j)**alpha / absmax(W_j)**(1 - alpha)``.

    Dead activation channels get factor 1; a zero weight row drops the
    denominator.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError("alpha must lie in [0, 1]")
    a, w = stats.channel_absmax, stats.weight_absmax
    num = np.power(a, alpha)
    den = np.where(w > 0, np.power(np.where(w > 0, w, 1.0), 1.0 - alpha), 1.0)
    lam = np.where(a > 0, num / den, 1.0)
    return SmoothScale(lam, alpha)


def apply_smooth(X, W, s: SmoothScale) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X / lam, lam * W)`` with ``lam`` broadcast over channels."""
    X, W = as_tensor(X, name="X"), as_tensor(W, name="W")
    n = s.lam.size
    if X.shape[1] != n or W.shape[0] != n:
        raise ShapeError(f"smoothing has {n} channels, got X {X.shape} and W {W.shape}")
    Xs = X.astype(np.float64) / s.lam
    Ws = W.astype(np.float64) * s.lam[:, None]
    return as_tensor(Xs), as_tensor(Ws)


# -- rotations ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Rotation:
    """One ``B x B`` orthogonal matrix, applied block-diagonally."""

    block_size: int
    matrix: np.ndarray
    provenance: str = "identity"
    seed: int = 0
    steps_used: int = 0

    @classmethod
    def identity(cls, block_size: int) -> Rotation:
        return cls(block_size, np.eye(block_size), "identity", 0, 0)

    def orthogonality_error(self) -> float:
        m = self.matrix
        return float(np.abs(m @ m.T - np.eye(self.block_size)).max(initial=0.0))

    def transpose(self) -> Rotation:
        return Rotation(self.block_size, self.matrix.T.copy(), self.provenance, self.seed, self.steps_used)

    def to_dict(self) -> dict:
        return {
            "block_size": self.block_size,
            "provenance": self.provenance,
            "seed": self.seed,
            "steps_used": self.steps_used,
            # repr(float) is the shortest round-trip-exact decimal
            "matrix": [float(v) for v in self.matrix.reshape(-1)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> Rotation:
        try:
            b = int(d["block_size"])
            m = np.array(d["matrix"], dtype=np.float64)
            if m.size != b * b:
                raise FormatError(f"matrix has {m.size} entries, expected {b * b}")
            return cls(b, m.reshape(b, b), str(d["provenance"]), int(d["seed"]), int(d["steps_used"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"invalid rotation JSON: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> Rotation:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid rotation JSON: {exc}") from None

    def __eq__(self, other):
        if not isinstance(other, Rotation):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def hadamard_rotation(block_size: int, seed: int = 0, randomize_signs: bool = True) -> Rotation:
    """``D @ H / sqrt(B)`` with Sylvester ``H`` and seeded random sign diagonal ``D``."""
    if not _is_pow2(block_size):
        raise ArgumentError(f"Hadamard block size must be a power of two, got {block_size}")
    h = scipy.linalg.hadamard(block_size).astype(np.float64) / np.sqrt(block_size)
    if randomize_signs:
        signs = make_rng(seed).choice(np.array([-1.0, 1.0]), size=block_size)
        h = signs[:, None] * h
    return Rotation(block_size, h, "hadamard", seed, 0)


def _uniform_first_basis(block_size: int, seed: int) -> np.ndarray:
    """Orthogonal Q whose first row is ``1/sqrt(B)`` everywhere.

    The remaining rows orthonormalize seeded Gaussian vectors against it.
    """
    u = np.full(block_size, 1.0 / np.sqrt(block_size))
    cand = np.column_stack([u, make_rng(seed).standard_normal((block_size, block_size - 1))])
    q, r = np.linalg.qr(cand)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    q = q.T
    q[0] = u
    return q


def greedy_rotation_step(peak_dim: int, block_size: int, seed: int) -> Rotation:
    """Rotation sending a unit impulse at ``peak_dim`` to the uniform vector.

    ``R = E @ Q`` where ``E`` swaps coordinates 0 and ``peak_dim``.
    """
    if not 0 <= peak_dim < block_size:
        raise ArgumentError(f"peak_dim {peak_dim} outside [0, {block_size})")
    q = _uniform_first_basis(block_size, seed)
    q[[0, peak_dim]] = q[[peak_dim, 0]]
    return Rotation(block_size, q, "outlier-aware", seed, 1)


@dataclass(frozen=True)
class GreedyTrace:
    """Peak ``max|calib @ R_1 ... R_k|`` for k = 0 .. max_steps."""

    peaks: np.ndarray
    best_step: int


def build_outlier_aware_rotation_traced(
    calib_block, block_size: int, max_steps: int = DEFAULT_MAX_STEPS, seed: int = 0
) -> tuple[Rotation, GreedyTrace]:
    calib = np.asarray(calib_block, dtype=np.float64)
    if calib.ndim != 2 or calib.shape[1] != block_size:
        raise ShapeError(f"calibration block must have {block_size} columns, got shape {calib.shape}")
    if max_steps < 1:
        raise ArgumentError("max_steps must be >= 1")

    peaks = [float(np.abs(calib).max(initial=0.0))]
    if peaks[0] == 0.0:
        return Rotation.identity(block_size), GreedyTrace(np.array(peaks), 0)

    current = calib
    total = np.eye(block_size)
    best_step, best_peak, best_total = 0, peaks[0], total
    for k in range(1, max_steps + 1):
        col = int(np.argmax(np.abs(current).max(axis=0)))
        step = greedy_rotation_step(col, block_size, _step_seed(seed, k)).matrix
        current = current @ step
        total = total @ step
        peak = float(np.abs(current).max())
        peaks.append(peak)
        if peak < best_peak:
            best_step, best_peak, best_total = k, peak, total
    if best_step == 0:
        rot = Rotation(block_size, np.eye(block_size), "outlier-aware", seed, 0)
    else:
        rot = Rotation(block_size, best_total, "outlier-aware", seed, best_step)
    return rot, GreedyTrace(np.array(peaks), best_step)


def build_outlier_aware_rotation(
    calib_block, block_size: int, max_steps: int = DEFAULT_MAX_STEPS, seed: int = 0
) -> Rotation:
    """Greedily compose impulse-dispersing steps and keep the best prefix.

    Each step targets the column holding the current largest magnitude over
    all calibration rows. The returned prefix minimizes that peak over
    k = 0 .. max_steps (k = 0 is no rotation); ties keep the shorter prefix.
    """
    return build_outlier_aware_rotation_traced(calib_block, block_size, max_steps, seed)[0]


def _step_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1, np.uint64)[0])


def select_reference_block(X, block_size: int) -> int:
    """Index of the column block holding the largest magnitude (lowest on ties)."""
    X = as_tensor(X, name="X")
    rows, cols = X.shape
    _check_div(cols, block_size, "X.cols")
    if X.size == 0:
        return 0
    per_block = np.abs(X).reshape(rows, cols // block_size, block_size).max(axis=(0, 2))
    return int(np.argmax(per_block))


def build_shared_rotation(
    X, block_size: int, max_steps: int = DEFAULT_MAX_STEPS, seed: int = 0
) -> Rotation:
    """Build one rotation from the reference block of ``X``, for reuse on every block."""
    X = as_tensor(X, name="X")
    ref = select_reference_block(X, block_size)
    calib = X[:, ref * block_size:(ref + 1) * block_size]
    return build_outlier_aware_rotation(calib, block_size, max_steps, seed)


def build_per_block_rotations(
    X, block_size: int, max_steps: int = DEFAULT_MAX_STEPS, seed: int = 0
) -> list[Rotation]:
    """One rotation per column block (ablation mode)."""
    X = as_tensor(X, name="X")
    _check_div(X.shape[1], block_size, "X.cols")
    return [
        build_outlier_aware_rotation(X[:, k * block_size:(k + 1) * block_size], block_size, max_steps, seed)
        for k in range(X.shape[1] // block_size)
    ]


def _check_div(n: int, block_size: int, what: str) -> None:
    if block_size <= 0 or n % block_size:
        raise ShapeError(f"{what}={n} is not divisible by block size {block_size}")


def _block_matrices(R: Rotation | Sequence[Rotation], n_blocks: int) -> tuple[int, np.ndarray]:
    """Stack of per-block matrices, shape ``(n_blocks, B, B)``."""
    if isinstance(R, Rotation):
        return R.block_size, np.broadcast_to(R.matrix, (n_blocks, R.block_size, R.block_size))
    rots = list(R)
    if len(rots) != n_blocks:
        raise ShapeError(f"{len(rots)} block rotations given for {n_blocks} blocks")
    b = rots[0].block_size
    if any(r.block_size != b for r in rots):
        raise ShapeError("block rotations disagree on block size")
    return b, np.stack([r.matrix for r in rots])


def _block_size_of(R: Rotation | Sequence[Rotation]) -> int:
    return R.block_size if isinstance(R, Rotation) else list(R)[0].block_size


def apply_block_rotation(T, R: Rotation | Sequence[Rotation], side: str = "right-activation") -> np.ndarray:
    """Apply a block-diagonal rotation.

    ``side="right-activation"`` returns ``T @ BlockDiag(R)`` (blocks along
    columns); ``side="left-weight-transpose"`` returns ``BlockDiag(R.T) @ T``
    (blocks along rows). ``R`` may be one shared rotation or one per block.
    """
    T = as_tensor(T)
    rows, cols = T.shape
    b = _block_size_of(R)
    if side == "right-activation":
        _check_div(cols, b, "cols")
        k = cols // b
        _, mats = _block_matrices(R, k)
        segs = T.astype(np.float64).reshape(rows, k, b)
        out = np.einsum("rki,kij->rkj", segs, mats).reshape(rows, cols)
    elif side == "left-weight-transpose":
        _check_div(rows, b, "rows")
        k = rows // b
        _, mats = _block_matrices(R, k)
        segs = T.astype(np.float64).reshape(k, b, cols)
        out = np.einsum("kji,kjc->kic", mats, segs).reshape(rows, cols)
    else:
        raise ArgumentError(f"unknown side {side!r}")
    return as_tensor(out)


def fuse_into_weight(W, s: SmoothScale, R: Rotation | Sequence[Rotation]) -> np.ndarray:
    """``BlockDiag(R.T) @ diag(lam) @ W`` evaluated in float64."""
    W = as_tensor(W, name="W")
    if s.lam.size != W.shape[0]:
        raise ShapeError(f"smoothing has {s.lam.size} channels, W has {W.shape[0]} rows")
    rows, cols = W.shape
    b = _block_size_of(R)
    _check_div(rows, b, "W.rows")
    k = rows // b
    _, mats = _block_matrices(R, k)
    scaled = (W.astype(np.float64) * s.lam[:, None]).reshape(k, b, cols)
    return as_tensor(np.einsum("kji,kjc->kic", mats, scaled).reshape(rows, cols))


# -- zigzag permutation -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Permutation:
    """``mapping[new_position] = original_channel``."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise ArgumentError("mapping is not a permutation")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(n))

    def inverse(self) -> Permutation:
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.mapping.size)
        return Permutation(inv)

    def apply_columns(self, X) -> np.ndarray:
        return as_tensor(as_tensor(X)[:, self.mapping])

    def apply_rows(self, W) -> np.ndarray:
        return as_tensor(as_tensor(W)[self.mapping, :])

    def to_dict(self) -> dict:
        return {"mapping": [int(i) for i in self.mapping]}

    def __eq__(self, other):
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.mapping, other.mapping)


def zigzag_permutation(channel_absmax, block_size: int) -> Permutation:
    """Deal channels, largest absmax first, across blocks in serpentine order.

    Pass 0 visits blocks 0..K-1, pass 1 visits K-1..0, and so on. Within a
    block channels keep the order in which they were dealt.
    """
    a = np.asarray(channel_absmax, dtype=np.float64)
    n = a.size
    _check_div(n, block_size, "channels")
    k = n // block_size
    order = np.argsort(-a, kind="stable")
    blocks: list[list[int]] = [[] for _ in range(k)]
    for i, ch in enumerate(order):
        sweep, pos = divmod(i, k)
        blocks[pos if sweep % 2 == 0 else k - 1 - pos].append(int(ch))
    return Permutation(np.array([c for blk in blocks for c in blk], dtype=np.int64))


# -- dual rotation baseline ------------------------------------------------------

@dataclass(frozen=True)
class DualTransform:
    first: Rotation | list[Rotation]
    permutation: Permutation
    second: Rotation | list[Rotation]


def build_dual_transform(
    X, block_size: int, max_steps: int = DEFAULT_MAX_STEPS, seed: int = 0, per_block: bool = False
) -> DualTransform:
    """Rotation, zigzag permutation, rotation; each stage calibrated on the output of the previous."""
    X = as_tensor(X, name="X")
    build = build_per_block_rotations if per_block else build_shared_rotation
    first = build(X, block_size, max_steps, seed)
    X1 = apply_block_rotation(X, first)
    perm = zigzag_permutation(np.abs(X1).max(axis=0, initial=0.0), block_size)
    X2 = perm.apply_columns(X1)
    second = build(X2, block_size, max_steps, _step_seed(seed, 1 << 32))
    return DualTransform(first, perm, second)


def apply_dual_transform(X, W, dual: DualTransform) -> tuple[np.ndarray, np.ndarray]:
    """``X @ R1 @ P @ R2`` and the matching ``R2.T @ P.T @ R1.T @ W``."""
    Xt = apply_block_rotation(X, dual.first)
    Xt = dual.permutation.apply_columns(Xt)
    Xt = apply_block_rotation(Xt, dual.second)
    Wt = apply_block_rotation(W, dual.first, side="left-weight-transpose")
    Wt = dual.permutation.apply_rows(Wt)
    Wt = apply_block_rotation(Wt, dual.second, side="left-weight-transpose")
    return Xt, Wt


def dual_rotation_pipeline(
    X, W, block_size: int, max_steps: int = DEFAULT_MAX_STEPS, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    dual = build_dual_transform(X, block_size, max_steps, seed)
    return apply_dual_transform(X, W, dual)
