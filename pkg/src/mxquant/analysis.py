"""Quantization error metrics and the pipeline comparison harness."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import transforms as tf
from .codec import DEFAULT_GROUP_SIZE, fake_quantize_mx
from .errors import ArgumentError, ShapeError
from .tensor import as_tensor

PIPELINES = ("original", "hadamard", "duquant-single", "duquant-dual")

CSV_HEADER = (
    "pipeline", "alpha", "block_size", "max_steps", "seed",
    "act_mean_err", "act_max_err", "wt_mean_err", "wt_max_err",
    "gemm_rel_err", "rot_apply_count",
)


@dataclass(frozen=True, eq=False)
class GroupErrorStats:
    """Per-group ``||rec - orig|| / ||orig||``; zero-norm groups record 0 and are
    left out of ``mean`` (``num_included`` counts the rest)."""

    per_group: np.ndarray
    mean: float
    max: float
    num_groups: int
    num_included: int

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "max": self.max,
            "num_groups": self.num_groups,
            "num_included": self.num_included,
        }

    def __eq__(self, other):
        if not isinstance(other, GroupErrorStats):
            return NotImplemented
        return self.summary() == other.summary() and np.array_equal(self.per_group, other.per_group)


def per_group_error(original, reconstructed, group_size: int = DEFAULT_GROUP_SIZE) -> GroupErrorStats:
    orig = as_tensor(original, name="original").astype(np.float64)
    rec = as_tensor(reconstructed, name="reconstructed").astype(np.float64)
    if orig.shape != rec.shape:
        raise ShapeError(f"shape mismatch {orig.shape} vs {rec.shape}")
    rows, cols = orig.shape
    if group_size <= 0 or cols % group_size:
        raise ShapeError(f"cols={cols} is not divisible by group_size={group_size}")
    og = orig.reshape(-1, group_size)
    num = np.linalg.norm(rec.reshape(-1, group_size) - og, axis=1)
    den = np.linalg.norm(og, axis=1)
    live = den > 0
    per = np.zeros(og.shape[0])
    per[live] = num[live] / den[live]
    n_live = int(live.sum())
    return GroupErrorStats(
        per_group=per,
        mean=float(per[live].mean()) if n_live else 0.0,
        max=float(per.max(initial=0.0)),
        num_groups=og.shape[0],
        num_included=n_live,
    )


def gemm_error(X, W, Xq, Wq) -> tuple[float, bool]:
    """Return ``(error, is_absolute)``; relative Frobenius error unless ``X @ W`` is zero."""
    X, W = as_tensor(X, name="X").astype(np.float64), as_tensor(W, name="W").astype(np.float64)
    Xq, Wq = as_tensor(Xq, name="Xq").astype(np.float64), as_tensor(Wq, name="Wq").astype(np.float64)
    if X.shape != Xq.shape or W.shape != Wq.shape:
        raise ShapeError("quantized operands must match the reference shapes")
    if X.shape[1] != W.shape[0]:
        raise ShapeError(f"cannot multiply {X.shape} by {W.shape}")
    ref = X @ W
    diff = float(np.linalg.norm(Xq @ Wq - ref))
    ref_norm = float(np.linalg.norm(ref))
    if ref_norm == 0.0:
        return diff, True
    return diff / ref_norm, False


def gemm_relative_error(X, W, Xq, Wq) -> float:
    """``||Xq @ Wq - X @ W||_F / ||X @ W||_F`` (absolute error if the reference is zero)."""
    return gemm_error(X, W, Xq, Wq)[0]


@dataclass(frozen=True)
class PipelineConfig:
    transform: str = "original"
    alpha: float = tf.DEFAULT_ALPHA
    block_size: int = DEFAULT_GROUP_SIZE
    max_steps: int = tf.DEFAULT_MAX_STEPS
    seed: int = 0
    randomize_hadamard_signs: bool = True
    per_block: bool = False

    def __post_init__(self):
        if self.transform not in PIPELINES:
            raise ArgumentError(f"unknown pipeline {self.transform!r}; choose from {', '.join(PIPELINES)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError("alpha must lie in [0, 1]")
        if self.block_size <= 0 or self.max_steps < 1 or self.seed < 0:
            raise ArgumentError("block_size and max_steps must be positive, seed non-negative")


@dataclass(frozen=True)
class TraceOp:
    """One online operation applied to the activation."""

    kind: str  # "smooth", "rotate" or "permute"
    groups: int = 0  # number of block-matrix multiplies, for "rotate"


@dataclass(eq=False)
class PipelineReport:
    config: PipelineConfig
    activation_stats: GroupErrorStats
    weight_stats: GroupErrorStats
    gemm_relative_error: float
    gemm_error_is_absolute: bool
    trace: list[TraceOp]
    rotation_steps: list[int]
    wall_time_ms: dict[str, float] = field(default_factory=dict)

    @property
    def rot_apply_count(self) -> int:
        """Block-rotation applications per activation group."""
        return sum(1 for op in self.trace if op.kind == "rotate")

    @property
    def permute_count(self) -> int:
        return sum(1 for op in self.trace if op.kind == "permute")

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "config": asdict(self.config),
            "activation": self.activation_stats.summary(),
            "weight": self.weight_stats.summary(),
            "gemm_relative_error": self.gemm_relative_error,
            "gemm_error_is_absolute": self.gemm_error_is_absolute,
            "trace": [asdict(op) for op in self.trace],
            "rot_apply_count": self.rot_apply_count,
            "rotation_steps": self.rotation_steps,
        }
        if include_timing:
            d["wall_time_ms"] = dict(self.wall_time_ms)
        return d

    def __eq__(self, other):
        # timings are informational and excluded from equality
        if not isinstance(other, PipelineReport):
            return NotImplemented
        return (
            self.to_dict() == other.to_dict()
            and self.activation_stats == other.activation_stats
            and self.weight_stats == other.weight_stats
        )


def _steps(r) -> list[int]:
    return [r.steps_used] if isinstance(r, tf.Rotation) else [x.steps_used for x in r]


def transform_operands(X, W, cfg: PipelineConfig):
    """Apply the configured transform. Returns ``(X_hat, W_hat, trace, rotation_steps)``."""
    X, W = as_tensor(X, name="X"), as_tensor(W, name="W")
    b = cfg.block_size
    if X.shape[1] != W.shape[0]:
        raise ShapeError(f"X has {X.shape[1]} channels but W has {W.shape[0]} rows")
    if X.shape[1] % b:
        raise ShapeError(f"channel count {X.shape[1]} is not divisible by block size {b}")
    groups = X.shape[0] * X.shape[1] // b

    if cfg.transform == "original":
        return X, W, [], []

    if cfg.transform == "hadamard":
        rot = tf.hadamard_rotation(b, cfg.seed, cfg.randomize_hadamard_signs)
        return (
            tf.apply_block_rotation(X, rot),
            tf.apply_block_rotation(W, rot, side="left-weight-transpose"),
            [TraceOp("rotate", groups)],
            [],
        )

    smooth = tf.compute_smooth_scale(tf.collect_calib_stats(X, W), cfg.alpha)
    Xs, _ = tf.apply_smooth(X, W, smooth)
    trace = [TraceOp("smooth")]

    if cfg.transform == "duquant-single":
        build = tf.build_per_block_rotations if cfg.per_block else tf.build_shared_rotation
        rot = build(Xs, b, cfg.max_steps, cfg.seed)
        Xh = tf.apply_block_rotation(Xs, rot)
        Wh = tf.fuse_into_weight(W, smooth, rot)
        return Xh, Wh, trace + [TraceOp("rotate", groups)], _steps(rot)

    dual = tf.build_dual_transform(Xs, b, cfg.max_steps, cfg.seed, per_block=cfg.per_block)
    Ws = tf.fuse_into_weight(W, smooth, tf.Rotation.identity(b))
    Xh, Wh = tf.apply_dual_transform(Xs, Ws, dual)
    trace += [TraceOp("rotate", groups), TraceOp("permute"), TraceOp("rotate", groups)]
    return Xh, Wh, trace, _steps(dual.first) + _steps(dual.second)


def run_pipeline(X, W, cfg: PipelineConfig) -> PipelineReport:
    """Transform, MXFP4-quantize and measure one configuration.

    Per-group errors are taken in the transformed domain. Weights are grouped
    along the input-channel axis (the GEMM reduction axis), i.e. on ``W_hat.T``.
    The GEMM error is against the untransformed full-precision ``X @ W``.
    """
    t0 = time.monotonic()
    Xh, Wh, trace, steps = transform_operands(X, W, cfg)
    t1 = time.monotonic()
    Xq = fake_quantize_mx(Xh, cfg.block_size)
    Wq = fake_quantize_mx(Wh.T, cfg.block_size).T
    t2 = time.monotonic()
    act = per_group_error(Xh, Xq, cfg.block_size)
    wt = per_group_error(Wh.T, Wq.T, cfg.block_size)
    gemm, is_abs = gemm_error(X, W, Xq, Wq)
    t3 = time.monotonic()
    timing = {
        "transform": round((t1 - t0) * 1e3, 3),
        "quantize": round((t2 - t1) * 1e3, 3),
        "measure": round((t3 - t2) * 1e3, 3),
    }
    return PipelineReport(cfg, act, wt, gemm, is_abs, trace, steps, timing)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def summary_csv(reports: list[PipelineReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        c = r.config
        w.writerow([
            c.transform, _fmt(c.alpha), c.block_size, c.max_steps, c.seed,
            _fmt(r.activation_stats.mean), _fmt(r.activation_stats.max),
            _fmt(r.weight_stats.mean), _fmt(r.weight_stats.max),
            _fmt(r.gemm_relative_error), r.rot_apply_count,
        ])
    return buf.getvalue()


def compare_pipelines(X, W, configs: list[PipelineConfig]) -> tuple[list[PipelineReport], str]:
    """Run every config in order; return the reports and the summary CSV text."""
    X, W = as_tensor(X, name="X"), as_tensor(W, name="W")
    reports = [run_pipeline(X, W, cfg) for cfg in configs]
    return reports, summary_csv(reports)
