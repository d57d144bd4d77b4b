"""Command-line front end.

Exit codes: 0 success, 1 domain/shape/argument errors, 2 I/O and parse
errors (including usage errors). Results go to stdout as ``key=value``
lines or CSV; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, codec, transforms
from .errors import FormatError, MxQuantError
from .tensor import OutlierSpec, generate_tensor_detailed, read_any, save_tensor

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Missing or inconsistent flags detected after argparse."""


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _read_tensor_or_mxq4(path: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw.startswith(codec.MXQ4_MAGIC):
        return codec.dequantize_tensor_mx(codec.mxq4_from_bytes(raw))
    return read_any(path)


def cmd_gen(args) -> None:
    spec = OutlierSpec(
        normal_fraction=args.normal_fraction,
        normal_magnitude=args.normal_mag,
        massive_count=args.massive_count,
        massive_magnitude=args.massive_mag,
        base_distribution={"normal": "standard-normal", "uniform": "uniform-symmetric"}[args.dist],
        seed=args.seed,
    )
    t, inj = generate_tensor_detailed(args.rows, args.cols, spec)
    save_tensor(t, args.output)
    print(
        f"rows={args.rows} cols={args.cols} seed={args.seed} "
        f"normal_channels={len(inj.normal_channels)} massive_cells={len(inj.massive_cells)}"
    )


def cmd_quantize(args) -> None:
    t = read_any(args.input)
    q = codec.quantize_tensor_mx(t, args.group_size)
    codec.save_mxq4(q, args.output)
    stats = analysis.per_group_error(t, codec.dequantize_tensor_mx(q), args.group_size)
    print(f"groups={q.num_groups} mean_err={_fmt(stats.mean)} max_err={_fmt(stats.max)}")


def cmd_dequantize(args) -> None:
    q = codec.load_mxq4(args.input)
    t = codec.dequantize_tensor_mx(q)
    save_tensor(t, args.output)
    print(f"rows={q.rows} cols={q.cols} groups={q.num_groups}")


def cmd_rotate(args) -> None:
    x = read_any(args.input)
    if args.kind == "hadamard":
        rot = transforms.hadamard_rotation(args.block_size, args.seed, not args.no_signs)
    else:
        if args.calib is None:
            raise UsageError("--kind outlier-aware requires --calib PATH")
        calib = read_any(args.calib)
        rot = transforms.build_shared_rotation(calib, args.block_size, args.max_steps, args.seed)
    applied = rot.transpose() if args.inverse else rot
    save_tensor(transforms.apply_block_rotation(x, applied), args.output)
    if args.emit_rotation:
        Path(args.emit_rotation).write_text(rot.to_json() + "\n")
    print(
        f"kind={args.kind} block_size={rot.block_size} steps_used={rot.steps_used} "
        f"inverse={int(args.inverse)} orth_err={_fmt(rot.orthogonality_error())}"
    )


def cmd_analyze(args) -> None:
    orig = read_any(args.orig)
    rec = _read_tensor_or_mxq4(args.recon)
    stats = analysis.per_group_error(orig, rec, args.group_size)
    print(
        f"groups={stats.num_groups} included={stats.num_included} "
        f"mean_err={_fmt(stats.mean)} max_err={_fmt(stats.max)}"
    )


def cmd_compare(args) -> None:
    names = [n.strip() for n in args.pipelines.split(",") if n.strip()]
    unknown = [n for n in names if n not in analysis.PIPELINES]
    if unknown or not names:
        raise UsageError(
            f"unknown pipeline(s) {', '.join(unknown) or '(none given)'}; "
            f"choose from {', '.join(analysis.PIPELINES)}"
        )
    X, W = read_any(args.act), read_any(args.weight)
    configs = [
        analysis.PipelineConfig(
            transform=n,
            alpha=args.alpha,
            block_size=args.group_size,
            max_steps=args.max_steps,
            seed=args.seed,
            randomize_hadamard_signs=not args.no_signs,
            per_block=args.per_block,
        )
        for n in names
    ]
    reports, table = analysis.compare_pipelines(X, W, configs)
    if args.output:
        Path(args.output).write_text(table)
    else:
        sys.stdout.write(table)
    if args.json:
        doc = [r.to_dict(include_timing=args.timing) for r in reports]
        Path(args.json).write_text(json.dumps(doc, indent=1) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mxquant",
        description="MXFP4 quantization with smoothing and outlier-aware block rotations.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic tensor with injected outliers")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--normal-fraction", type=float, default=0.0,
                   help="share of channels scaled across all rows (channel-wise outliers)")
    g.add_argument("--normal-mag", type=float, default=1.0)
    g.add_argument("--massive-count", type=int, default=0,
                   help="number of single cells scaled by --massive-mag (token-wise outliers)")
    g.add_argument("--massive-mag", type=float, default=1.0)
    g.add_argument("--dist", choices=("normal", "uniform"), default="normal")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("quantize", help="MXFP4-quantize a tensor into an MXQ4 file")
    q.add_argument("-i", "--input", required=True)
    q.add_argument("-o", "--output", required=True)
    q.add_argument("--group-size", type=int, default=codec.DEFAULT_GROUP_SIZE,
                   help="elements sharing one E8M0 scale (MXFP4 uses 32)")
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("dequantize", help="expand an MXQ4 file back to MXTEN1")
    d.add_argument("-i", "--input", required=True)
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=cmd_dequantize)

    r = sub.add_parser("rotate", help="apply a block-diagonal rotation to the columns of a tensor")
    r.add_argument("-i", "--input", required=True)
    r.add_argument("--kind", choices=("hadamard", "outlier-aware"), required=True)
    r.add_argument("--calib", help="calibration tensor (required for outlier-aware)")
    r.add_argument("--block-size", type=int, default=codec.DEFAULT_GROUP_SIZE,
                   help="rotation block size, aligned with the MXFP4 group (32)")
    r.add_argument("--max-steps", type=int, default=transforms.DEFAULT_MAX_STEPS,
                   help="greedy search step budget (128)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--no-signs", action="store_true", help="plain Hadamard, no random sign flips")
    r.add_argument("--inverse", action="store_true", help="apply the transposed rotation")
    r.add_argument("--emit-rotation", metavar="PATH", help="write the rotation as JSON")
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_rotate)

    a = sub.add_parser("analyze", help="per-group normalized error between two tensors")
    a.add_argument("--orig", required=True)
    a.add_argument("--recon", required=True, help="MXTEN1, CSV or MXQ4 file")
    a.add_argument("--group-size", type=int, default=codec.DEFAULT_GROUP_SIZE)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="run several pipelines and emit a CSV summary")
    c.add_argument("--act", required=True)
    c.add_argument("--weight", required=True)
    c.add_argument("--pipelines", required=True,
                   help=f"comma-separated subset of {','.join(analysis.PIPELINES)}")
    c.add_argument("--alpha", type=float, default=transforms.DEFAULT_ALPHA,
                   help="smoothing migration strength (0.5)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--max-steps", type=int, default=transforms.DEFAULT_MAX_STEPS)
    c.add_argument("--group-size", type=int, default=codec.DEFAULT_GROUP_SIZE)
    c.add_argument("--no-signs", action="store_true")
    c.add_argument("--per-block", action="store_true",
                   help="one rotation per block instead of a single shared one")
    c.add_argument("--json", metavar="PATH", help="write full per-pipeline reports")
    c.add_argument("--timing", action="store_true", help="include wall times in the JSON reports")
    c.add_argument("-o", "--output", help="CSV path (default: stdout)")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MxQuantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
