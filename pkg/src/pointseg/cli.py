"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Machine-readable output goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .augment import augment, render_overlay
from .bench import (
    Dataset,
    ExperimentSpec,
    SimulatedAnnotator,
    ablation_csv,
    make_synthetic_dataset,
    results_csv,
    run_ablation,
    run_experiment,
)
from .errors import PointsegError
from .metrics import ConfusionMatrix, accumulate, compute_metrics, metrics_csv
from .proposals import FallbackConfig, generate_fallback_proposals, load_proposals
from .raster import UNLABELED, ImageDims, LabelMap, LabelSchema, PointLabelSet, RasterImage
from .sampler import STRATEGIES, SamplerConfig, sample_points

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="pointseg", description="Active point sampling and sparse label augmentation")
    p.add_argument("--version", action="version", version=f"pointseg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample", help="select annotation points for an image")
    sp.add_argument("image", type=Path)
    sp.add_argument("--strategy", choices=STRATEGIES, default="dynamic")
    sp.add_argument("--n", type=int, required=True, help="point budget")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--lambda", dest="lambda_", type=float, default=0.5)
    sp.add_argument("--random-ratio", type=float, default=0.5)
    sp.add_argument("--proposals", type=Path, help="proposal manifest JSON")
    sp.add_argument("--fallback", action="store_true", help="generate proposals internally")
    sp.add_argument("--gt", type=Path, help="dense GT mask: fills labels via the oracle")
    sp.add_argument("--out", type=Path, help="write CSV here instead of stdout")
    _add_fallback_flags(sp)

    ap = sub.add_parser("augment", help="propagate a point CSV to a dense label map")
    ap.add_argument("image", type=Path)
    ap.add_argument("--points", type=Path, required=True)
    ap.add_argument("--proposals", type=Path)
    ap.add_argument("--fallback", action="store_true")
    ap.add_argument("--out", type=Path, required=True, help="indexed PNG output")
    ap.add_argument("--overlay", type=Path, help="optional color overlay PNG")
    ap.add_argument("--opacity", type=float, default=0.5)
    ap.add_argument("--schema", type=Path, help="schema JSON (needed for --overlay)")
    ap.add_argument("--slic-k", type=int, default=100)
    ap.add_argument("--slic-compactness", type=float, default=10.0)
    ap.add_argument("--slic-iters", type=int, default=10)
    _add_fallback_flags(ap)

    ep = sub.add_parser("evaluate", help="score predictions against ground truth")
    ep.add_argument("--pred", type=Path, required=True, help="PNG file or directory")
    ep.add_argument("--gt", type=Path, required=True, help="PNG file or directory")
    ep.add_argument("--schema", type=Path, required=True)
    ep.add_argument("--masked", action="store_true", help="exclude GT background pixels")
    ep.add_argument("--out", type=Path)

    bp = sub.add_parser("bench", help="run a strategy/budget/seed experiment grid")
    bp.add_argument("--spec", type=Path, required=True)
    bp.add_argument("--out-dir", type=Path, help="override spec out_dir")
    bp.add_argument("--no-timing", action="store_true", help="zero the time columns (byte-reproducible runs)")

    lp = sub.add_parser("ablate", help="sweep lambda or random_ratio")
    lp.add_argument("--spec", type=Path, required=True)
    lp.add_argument("--param", choices=("lambda", "random_ratio"), required=True)
    lp.add_argument("--values", help="comma-separated values (default: standard grid)")
    lp.add_argument("--out-dir", type=Path)

    yp = sub.add_parser("synth", help="generate the synthetic blob dataset")
    yp.add_argument("--out", type=Path, required=True)
    yp.add_argument("--count", type=int, default=20)
    yp.add_argument("--width", type=int, default=128)
    yp.add_argument("--height", type=int, default=128)
    yp.add_argument("--classes", type=int, default=6)
    yp.add_argument("--seed", type=int, default=0)

    vp = sub.add_parser("serve", help="run the interactive annotation service")
    vp.add_argument("--config", type=Path, help="service config JSON")
    vp.add_argument("--host")
    vp.add_argument("--port", type=int)
    return p


def _add_fallback_flags(p):
    p.add_argument("--fallback-k", type=int, default=64)
    p.add_argument("--fallback-tau", type=float, default=10.0)
    p.add_argument("--fallback-min-area", type=int)
    p.add_argument("--fallback-compactness", type=float, default=12.0)


def _fallback_config(args) -> FallbackConfig:
    return FallbackConfig(
        k_gen=args.fallback_k,
        tau=args.fallback_tau,
        min_area=args.fallback_min_area,
        compactness=args.fallback_compactness,
    )


def _load_proposals_arg(args, image: RasterImage):
    if args.proposals is not None:
        return load_proposals(args.proposals)
    if args.fallback:
        return generate_fallback_proposals(image, _fallback_config(args))
    return None


def _cmd_sample(args) -> int:
    image = RasterImage.load(args.image)
    proposals = _load_proposals_arg(args, image)
    if args.strategy in ("centroid", "dynamic", "dynamic_only_a") and proposals is None:
        raise _UsageError(f"--strategy {args.strategy} requires --proposals or --fallback")
    annotator = None
    if args.gt is not None:
        gt = LabelMap.load_png(args.gt)
        if gt.dims != image.dims:
            raise PointsegError(f"gt dims {gt.dims} != image dims {image.dims}")
        annotator = SimulatedAnnotator(gt, background_id=0)
    config = SamplerConfig(
        budget=args.n,
        lambda_=args.lambda_,
        random_ratio=args.random_ratio,
        seed=args.seed,
        strategy=args.strategy,
    )
    points = sample_points(image.dims, proposals, config, annotator)
    text = points.to_csv()
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_points_csv(path: Path, dims: ImageDims) -> PointLabelSet:
    """Labeled rows only; out-of-bounds rows are data errors with row numbers."""
    import csv as _csv
    import io as _io

    rows = list(_csv.reader(_io.StringIO(path.read_text())))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y", "label"]:
        raise PointsegError(f"{path}: point CSV must start with header x,y,label")
    pairs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            x, y, label = (int(v) for v in row)
        except ValueError as exc:
            raise PointsegError(f"{path}: row {lineno}: {exc}") from exc
        if not dims.contains(x, y):
            raise PointsegError(f"{path}: row {lineno}: point ({x}, {y}) out of bounds for {dims.width}x{dims.height}")
        if label == UNLABELED:
            continue
        pairs.append(((x, y), label))
    if not pairs:
        raise PointsegError(f"{path}: no labeled rows")
    return PointLabelSet.build(pairs)


def _cmd_augment(args) -> int:
    image = RasterImage.load(args.image)
    proposals = _load_proposals_arg(args, image)
    if proposals is None:
        raise _UsageError("augment requires --proposals or --fallback")
    points = _parse_points_csv(args.points, image.dims)
    result = augment(
        image,
        points,
        proposals,
        k=args.slic_k,
        compactness=args.slic_compactness,
        iters=args.slic_iters,
    )
    schema = LabelSchema.load(args.schema) if args.schema else None
    result.save_png(args.out, schema)
    if args.overlay:
        if schema is None:
            raise _UsageError("--overlay requires --schema for class colors")
        args.overlay.write_bytes(render_overlay(image, result, schema, args.opacity))
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def _pair_pngs(pred: Path, gt: Path) -> list[tuple[Path, Path]]:
    if pred.is_file() and gt.is_file():
        return [(pred, gt)]
    if pred.is_dir() and gt.is_dir():
        pairs = []
        for p in sorted(pred.glob("*.png")):
            g = gt / p.name
            if not g.is_file():
                raise PointsegError(f"no GT file for {p.name}")
            pairs.append((p, g))
        if not pairs:
            raise PointsegError(f"{pred} holds no PNG files")
        return pairs
    raise PointsegError("--pred and --gt must both be files or both be directories")


def _cmd_evaluate(args) -> int:
    schema = LabelSchema.load(args.schema)
    cm = ConfusionMatrix(schema.num_classes)
    for pred_path, gt_path in _pair_pngs(args.pred, args.gt):
        accumulate(cm, LabelMap.load_png(gt_path), LabelMap.load_png(pred_path))
    report = compute_metrics(cm, schema, masked=args.masked)
    text = metrics_csv(report, schema)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_bench(args) -> int:
    spec = ExperimentSpec.parse_file(args.spec)
    if args.out_dir is not None:
        from dataclasses import replace

        spec = replace(spec, out_dir=args.out_dir)
    if args.no_timing:
        from dataclasses import replace

        spec = replace(spec, timing=False)
    rows = run_experiment(spec)
    sys.stdout.write(results_csv(rows))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    spec = ExperimentSpec.parse_file(args.spec)
    if args.out_dir is not None:
        from dataclasses import replace

        spec = replace(spec, out_dir=args.out_dir)
    values = None
    if args.values:
        values = tuple(float(v) for v in args.values.split(","))
    rows = run_ablation(spec, args.param, values)
    sys.stdout.write(ablation_csv(rows))
    return EXIT_OK


def _cmd_synth(args) -> int:
    dims = ImageDims(args.width, args.height)
    dataset = make_synthetic_dataset(args.out, args.count, dims, args.classes, args.seed)
    print(f"wrote {len(dataset.pairs)} image/mask pairs to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    if args.host:
        config = config.with_overrides(host=args.host)
    if args.port:
        config = config.with_overrides(port=args.port)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "sample": _cmd_sample,
    "augment": _cmd_augment,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
    "synth": _cmd_synth,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help/--version
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PointsegError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
