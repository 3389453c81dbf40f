"""
Main entry point for the Metric-Phase Field reconstruction pipeline.
"""

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import torch

from src import configure_logging
from src.config import (
    RunConfig,
    apply_overrides,
    echo_config,
    load_config,
    parse_override_args,
)
from src.data_generator import SHAPES, ShapeSampler
from src.errors import (
    CheckpointError,
    ConfigError,
    DegenerateExtentError,
    EmptyInputError,
    MeshReadError,
    MPFError,
    PointCloudParseError,
    UnsupportedFormatError,
)
from src.extraction import (
    AXES,
    extract_mesh,
    extract_probe,
    parse_probe,
    render_slice,
    sign_changes,
    write_slice,
)
from src.field import MetricPhaseField
from src.geometry_io import (
    PointCloud,
    Transform,
    TriangleMesh,
    denormalize_mesh,
    load_mesh,
    load_points,
    normalize,
    write_mesh,
    write_points,
)
from src.losses import TERMS
from src.metrics import (
    SurfaceEvaluator,
    chamfer,
    point_to_surface,
    sample_surface,
)
from src.trainer import FieldTrainer, load_checkpoint
from src.visualizer import Visualizer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

THREADS_ENV = "MPF_NUM_THREADS"

# Errors caused by the user's inputs rather than by the computation.
USAGE_ERRORS = (
    FileNotFoundError,
    PointCloudParseError,
    EmptyInputError,
    DegenerateExtentError,
    ConfigError,
    CheckpointError,
    UnsupportedFormatError,
    MeshReadError,
)

ABLATION_MULTIPLIERS = (0.0, 1.0, 10.0)

ABLATION_LABELS: Dict[Tuple[str, float], str] = {
    ("align", 10.0): "Strong alignment",
    ("align", 0.0): "No alignment",
    ("normal", 10.0): "Strong normal constraint",
    ("normal", 0.0): "No normal constraint",
    ("lap", 10.0): "Strong Laplacian constraint",
    ("lap", 0.0): "No Laplacian constraint",
    ("phase", 10.0): "Strong phase constraint",
    ("phase", 0.0): "No phase constraint",
    ("eik_r", 10.0): "Strong metric Eikonal constraint",
    ("eik_r", 0.0): "No metric Eikonal constraint",
    ("eik_phi", 10.0): "Strong phase Eikonal constraint",
    ("eik_phi", 0.0): "No phase Eikonal constraint",
    ("far", 10.0): "Strong far-field repulsion",
    ("far", 0.0): "No far-field repulsion",
    ("zero", 10.0): "Strong zero-level constraint",
    ("zero", 0.0): "No zero-level constraint",
}

DEFAULT_VARIANTS = [
    (term, m) for term in ("align", "normal", "lap", "phase")
    for m in (10.0, 0.0)
]


def banner(title: str):
    print("\n" + "=" * 50)
    print(title)
    print("=" * 50)


def configure_threads():
    """Apply the thread count from the environment, if set."""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            torch.set_num_threads(int(value))
        except ValueError:
            raise ConfigError(
                f"{THREADS_ENV} must be an integer, got '{value}'"
            ) from None


@dataclass
class ReconstructionResult:
    field: MetricPhaseField
    log: pd.DataFrame
    mesh: TriangleMesh
    transform: Transform
    paths: Dict[str, str]


def run_reconstruction(cloud: PointCloud, config: RunConfig, run_dir: str,
                       resume_from: Optional[str] = None
                       ) -> ReconstructionResult:
    """
    Normalize, train, extract and write every run artifact.

    Args:
        cloud: Raw point cloud
        config: Run configuration
        run_dir: Output directory
        resume_from: Checkpoint to continue training from

    Returns:
        ReconstructionResult with the mesh in input units
    """
    os.makedirs(run_dir, exist_ok=True)
    paths = {"config": echo_config(config, run_dir)}

    normalized, transform = normalize(cloud)
    paths["transform"] = os.path.join(run_dir, "transform.json")
    with open(paths["transform"], "w", newline="\n") as f:
        json.dump(transform.to_dict(), f, indent=2)

    trainer = FieldTrainer(config.train, run_dir)
    field, log = trainer.train(normalized, resume_from=resume_from)

    paths["checkpoint"] = trainer.checkpoint_path
    trainer.save(paths["checkpoint"])
    paths["log"] = os.path.join(run_dir, "loss_log.csv")
    log.to_csv(paths["log"], index=False)
    if len(log):
        paths["loss_plot"] = os.path.join(run_dir, "loss_history.png")
        Visualizer().plot_loss_history(log, paths["loss_plot"])

    mesh = denormalize_mesh(
        extract_mesh(field, config.extract.res, "phi", config.extract.iso),
        transform,
    )
    paths["mesh"] = os.path.join(run_dir, f"mesh.{config.extract.mesh_format}")
    write_mesh(paths["mesh"], mesh)
    return ReconstructionResult(field, log, mesh, transform, paths)


def _load_run_config(args, extra: Sequence[str]) -> RunConfig:
    config = load_config(args.config)
    overrides = parse_override_args(extra)
    if args.seed is not None:
        overrides.append(("train.seed", args.seed))
    if args.res is not None:
        overrides.append(("extract.res", args.res))
    if args.out is not None:
        overrides.append(("io.output", args.out))
    if getattr(args, "input", None):
        overrides.append(("io.input", args.input))
    return apply_overrides(config, overrides)


def _sample_shape(args) -> PointCloud:
    """Synthetic cloud from the --shape / --noise / --gap options."""
    if args.noise < 0:
        raise ConfigError(f"--noise must be >= 0, got {args.noise}")
    if args.gap is not None:
        if args.shape != "shell":
            raise ConfigError("--gap only applies to --shape shell")
        if args.gap <= 0:
            raise ConfigError(f"--gap must be > 0, got {args.gap}")
    seed = args.seed if args.seed is not None else 42
    return ShapeSampler(seed).generate(args.shape, args.n_points,
                                       noise=args.noise, gap=args.gap)


def cmd_generate(args, extra) -> int:
    cloud = _sample_shape(args)
    if not args.normals:
        cloud = PointCloud(cloud.points)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_points(args.out, cloud)
    print(f"✓ {cloud.count} points of '{args.shape}' saved to {args.out}")
    return EXIT_OK


def cmd_reconstruct(args, extra) -> int:
    config = _load_run_config(args, extra)
    cloud = load_points(config.io.input)

    banner("RECONSTRUCTION")
    print(f"Input: {config.io.input} ({cloud.count} points)")
    print(f"Output: {config.io.output}")
    result = run_reconstruction(cloud, config, config.io.output,
                                resume_from=args.resume)

    print("\n📊 Result:")
    print(f"  Vertices: {len(result.mesh.vertices)}")
    print(f"  Triangles: {len(result.mesh.triangles)}")
    if not result.mesh.is_empty:
        cd = chamfer(sample_surface(result.mesh, len(cloud.points) * 4,
                                    config.train.seed), cloud.points)
        print(f"  Chamfer vs input (x1e3): {cd:#.4g}")
    for kind, path in result.paths.items():
        print(f"💾 {kind}: {path}")
    return EXIT_OK


def _load_geometry(path: str):
    """Points for .xyz, a mesh for .obj, whichever a .ply holds."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".xyz":
        return load_points(path).points
    if ext == ".obj":
        return load_mesh(path)
    if ext == ".ply":
        mesh = load_mesh(path)
        return mesh if not mesh.is_empty else load_points(path).points
    raise UnsupportedFormatError(f"cannot infer geometry type of '{path}'")


def cmd_evaluate(args, extra) -> int:
    a = _load_geometry(args.prediction)
    b = _load_geometry(args.reference)
    seed = args.seed if args.seed is not None else 0

    def as_points(geometry):
        if isinstance(geometry, TriangleMesh):
            return sample_surface(geometry, args.samples, seed)
        return geometry

    if args.mode == "chamfer":
        value = chamfer(as_points(a), as_points(b))
    else:
        if not isinstance(b, TriangleMesh):
            raise ConfigError("p2s needs a mesh as the reference")
        value = point_to_surface(as_points(a), b)

    print(f"{args.mode} (x1e3): {value:#.4g}")
    if args.csv:
        pd.DataFrame([{
            "mode": args.mode,
            "prediction": args.prediction,
            "reference": args.reference,
            "value": value,
        }]).to_csv(args.csv, index=False)
    return EXIT_OK


def cmd_slice(args, extra) -> int:
    field = load_checkpoint(args.checkpoint).field
    try:
        image = render_slice(field, args.axis, args.offset, args.res,
                             args.field)
        probe = None
        if args.probe:
            start, end = parse_probe(args.probe)
            probe = extract_probe(field, start, end, args.probe_samples,
                                  args.field)
    except ValueError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    prefix = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.checkpoint)),
        f"slice_{args.field}_{args.axis}{args.offset:+.3f}",
    )
    written = write_slice(prefix, image, probe)
    if probe is not None:
        written["probe_plot"] = f"{prefix}_probe.png"
        Visualizer().plot_probe(probe, written["probe_plot"], args.field)
        print(f"Probe sign changes: {sign_changes(probe['value'])}")
    for kind, path in written.items():
        print(f"✓ {kind} saved to {path}")
    return EXIT_OK


def cmd_check_grad(args, extra) -> int:
    from src.gradcheck import run_gradcheck

    report = run_gradcheck(
        seed=args.seed if args.seed is not None else 0,
        batch_size=args.batch,
        hidden=args.hidden,
        max_entries=args.max_entries,
        corrupt=args.corrupt,
    )
    print(report.text())
    if not report.passed:
        worst = report.worst()
        print(f"❌ {worst.name} check failed at {worst.worst_at}")
        return EXIT_FAILURE
    return EXIT_OK


def parse_variant(text: str) -> Tuple[str, float]:
    """Parse ``term:multiplier``, e.g. ``phase:0``."""
    try:
        term, mult = text.split(":")
        multiplier = float(mult)
    except ValueError:
        raise ConfigError(
            f"variant must look like 'term:multiplier', got '{text}'"
        ) from None
    if term not in TERMS:
        raise ConfigError(f"unknown loss term '{term}' (expected {TERMS})")
    if multiplier not in ABLATION_MULTIPLIERS:
        raise ConfigError(
            f"multiplier must be one of {ABLATION_MULTIPLIERS}, got {mult}"
        )
    return term, multiplier


def variant_label(term: Optional[str], multiplier: float) -> str:
    if term is None or multiplier == 1.0:
        return "Default"
    return ABLATION_LABELS.get((term, multiplier), f"{term} x{multiplier:g}")


def scaled_config(config: RunConfig, term: Optional[str],
                  multiplier: float) -> RunConfig:
    """Copy of config with one loss weight multiplied."""
    scaled = copy.deepcopy(config)
    if term is not None:
        weight = getattr(scaled.train.weights, term)
        setattr(scaled.train.weights, term, weight * multiplier)
    return scaled


def run_ablation(cloud: PointCloud, config: RunConfig, out_dir: str,
                 variants: List[Tuple[str, float]]) -> pd.DataFrame:
    """
    Train one variant per weight override and score each against the input.

    Failed variants are recorded with their error and the sweep continues.

    Returns:
        DataFrame with one row per variant (the default run first)
    """
    evaluator = SurfaceEvaluator(cloud.points, seed=config.train.seed)
    rows = []
    for term, multiplier in [(None, 1.0)] + list(variants):
        label = variant_label(term, multiplier)
        slug = "default" if term is None else f"{term}_x{multiplier:g}"
        row = {"variant": label, "term": term or "", "multiplier": multiplier,
               "chamfer": float("nan"), "p2s": float("nan"),
               "status": "ok", "error": ""}
        print(f"\n▶ {label}")
        try:
            result = run_reconstruction(
                cloud, scaled_config(config, term, multiplier),
                os.path.join(out_dir, slug),
            )
            row.update(evaluator.evaluate(result.mesh))
            print(f"  Chamfer (x1e3): {row['chamfer']:#.4g}")
        except MPFError as exc:
            logger.error("Variant '%s' failed: %s", label, exc)
            row["status"] = "failed"
            row["error"] = str(exc)
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_ablate(args, extra) -> int:
    config = _load_run_config(args, extra)
    if config.io.input:
        cloud = load_points(config.io.input)
    else:
        cloud = _sample_shape(args)
    variants = [parse_variant(v) for v in args.variant] or DEFAULT_VARIANTS

    banner("LOSS ABLATION")
    table = run_ablation(cloud, config, config.io.output, variants)
    path = os.path.join(config.io.output, "ablation.csv")
    table.to_csv(path, index=False)
    print("\n" + table[["variant", "chamfer", "p2s", "status"]].to_string(
        index=False
    ))
    print(f"\n💾 Table saved to {path}")
    return EXIT_OK


def _add_seed(parser: argparse.ArgumentParser):
    parser.add_argument('--seed', type=int, default=None,
                        help='Random seed')


def _add_shape_options(parser: argparse.ArgumentParser, shape: str,
                       n_points: int):
    parser.add_argument('--shape', choices=SHAPES, default=shape)
    parser.add_argument('--n-points', type=int, default=n_points)
    parser.add_argument('--noise', type=float, default=0.0,
                        help='Gaussian jitter as a fraction of the '
                             'bounding-box diagonal (0.005 = 0.5%%)')
    parser.add_argument('--gap', type=float, default=None,
                        help='Distance between the two shell sheets')


def _add_run_options(parser: argparse.ArgumentParser):
    _add_seed(parser)
    parser.add_argument('--config', type=str, default=None,
                        help='JSON run configuration')
    parser.add_argument('--res', type=int, default=None,
                        help='Extraction grid resolution per axis')
    parser.add_argument('--out', type=str, default=None,
                        help='Output directory')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Metric-Phase Field surface reconstruction',
        epilog='Dotted options such as --weights.normal=0 or '
               '--train.iterations=500 override the configuration.'
    )
    parser.add_argument('--verbose', action='store_true',
                        help='Log debug messages')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', help='Write a synthetic point cloud')
    _add_shape_options(p, 'sphere', 5000)
    p.add_argument('--normals', action='store_true',
                   help='Include exact normals')
    p.add_argument('--out', type=str, required=True,
                   help='Destination .xyz file')
    _add_seed(p)
    p.set_defaults(handler=cmd_generate, accepts_overrides=False)

    p = sub.add_parser('reconstruct', help='Fit a field and extract a mesh')
    p.add_argument('input', type=str, help='Input .xyz or .ply point cloud')
    _add_run_options(p)
    p.add_argument('--resume', type=str, default=None,
                   help='Checkpoint to resume training from')
    p.set_defaults(handler=cmd_reconstruct, accepts_overrides=True)

    p = sub.add_parser('evaluate', help='Chamfer or point-to-surface metric')
    p.add_argument('prediction', type=str)
    p.add_argument('reference', type=str)
    p.add_argument('--mode', choices=('chamfer', 'p2s'), default='chamfer')
    p.add_argument('--samples', type=int, default=100_000,
                   help='Surface samples drawn from meshes')
    p.add_argument('--csv', type=str, default=None,
                   help='Also write the metric to this CSV file')
    _add_seed(p)
    p.set_defaults(handler=cmd_evaluate, accepts_overrides=False)

    p = sub.add_parser('slice', help='Render a field slice and probe')
    p.add_argument('checkpoint', type=str)
    p.add_argument('--axis', choices=tuple(AXES), default='z')
    p.add_argument('--offset', type=float, default=0.0)
    p.add_argument('--field', choices=('phi', 'r', 'theta'), default='phi')
    p.add_argument('--res', type=int, default=256)
    p.add_argument('--probe', type=str, default=None,
                   help="Probe segment 'x0,y0,z0:x1,y1,z1'")
    p.add_argument('--probe-samples', type=int, default=256)
    p.add_argument('--out', type=str, default=None,
                   help='Output file prefix')
    p.set_defaults(handler=cmd_slice, accepts_overrides=False)

    p = sub.add_parser('check-grad', help='Finite-difference self-check')
    p.add_argument('--batch', type=int, default=64)
    p.add_argument('--hidden', type=int, default=16)
    _add_seed(p)
    p.add_argument('--max-entries', type=int, default=None,
                   help='Check at most this many entries per parameter')
    p.add_argument('--corrupt', type=str, default=None,
                   help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_check_grad, accepts_overrides=False)

    p = sub.add_parser('ablate', help='Loss-weight ablation table')
    p.add_argument('input', type=str, nargs='?', default=None,
                   help='Input point cloud (defaults to a synthetic shape)')
    _add_shape_options(p, 'cube-sheet', 8000)
    p.add_argument('--variant', action='append', default=[],
                   help="Weight override 'term:multiplier' (0, 1 or 10)")
    _add_run_options(p)
    p.set_defaults(handler=cmd_ablate, accepts_overrides=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function to run the reconstruction pipeline."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and not args.accepts_overrides:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")

    configure_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        configure_threads()
        return args.handler(args, extra)
    except USAGE_ERRORS as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MPFError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
