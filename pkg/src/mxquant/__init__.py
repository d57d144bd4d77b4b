"""MXFP4 microscaling quantization with smoothing and outlier-aware block rotations."""

from .analysis import (
    PIPELINES,
    GroupErrorStats,
    PipelineConfig,
    PipelineReport,
    compare_pipelines,
    gemm_relative_error,
    per_group_error,
    run_pipeline,
)
from .codec import (
    IntQuantParams,
    MxQuantizedTensor,
    block_scale,
    dequantize_block,
    dequantize_tensor_mx,
    fp4_decode,
    fp4_encode,
    fp4_nearest,
    int_uniform_quantize,
    load_mxq4,
    quantize_block,
    quantize_tensor_mx,
    save_mxq4,
)
from .errors import ArgumentError, DomainError, FormatError, MxQuantError, ShapeError, TruncationError
from .tensor import OutlierSpec, generate_tensor, load_tensor, read_csv, save_tensor
from .transforms import (
    CalibStats,
    Permutation,
    Rotation,
    SmoothScale,
    apply_block_rotation,
    apply_smooth,
    build_outlier_aware_rotation,
    collect_calib_stats,
    compute_smooth_scale,
    dual_rotation_pipeline,
    fuse_into_weight,
    greedy_rotation_step,
    hadamard_rotation,
    select_reference_block,
    zigzag_permutation,
)

__version__ = "0.1.0"
