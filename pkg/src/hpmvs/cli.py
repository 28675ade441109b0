"""Command-line front end.

    hpmvs reconstruct SCENE_DIR --out DIR   depth maps + fused point cloud
    hpmvs synth --template NAME --out DIR   render a synthetic test scene
    hpmvs eval REC.ply GT.ply               accuracy / completeness / F1
    hpmvs ablate SCENE_DIR                  compare pipeline variants
    hpmvs dump-config                       print the effective configuration

Options shared with the config file are resolved in order: built-in
default, then the --config file, then the explicit flag. Exit codes are
categorized so scripts can tell what went wrong: 2 for usage errors,
3 for missing or unreadable files, 4 for malformed data, 5 when a scene
has too few views.
"""

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import fusion, imaging, synth
from .config import (ABLATION_ROWS, RunConfig, dump_config, parse_config,
                     row_config)
from .errors import FormatError, HpmvsError, InsufficientViewsError
from .hpm import run_scene
from .patchmatch import set_workers
from .scene import load_scene

__all__ = ["main", "build_parser",
           "EXIT_OK", "EXIT_USAGE", "EXIT_IO", "EXIT_FORMAT", "EXIT_VIEWS"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_VIEWS = 5

WORKERS_ENV = "HPMVS_WORKERS"

_FIELD_HELP = {
    "k": "hypotheses kept per sampling region",
    "n_ext": "adaptive extension levels per region",
    "tau_good": "cost below which a region stops extending",
    "tau_bad": "cost above which a region extends immediately",
    "alpha": "decay constant of the extension threshold",
    "n_good": "extra candidates around low-cost incumbents",
    "n_bad": "extra candidates around high-cost incumbents",
    "radius": "base sampling radius in pixels (0 turns sampling local)",
    "iterations": "propagation sweeps per stage",
    "patch_radius": "half-size of the matching window",
    "seed": "random seed for the whole run",
    "tau_cred": "photometric cost bound for prior support pixels",
    "prior_k": "neighbors consulted for planar support",
    "eta": "weight of the planar prior term",
    "gamma": "floor inside the prior likelihood",
    "sigma_d": "prior depth tolerance (relative)",
    "sigma_n": "prior normal tolerance (radians)",
    "scales": "comma separated pyramid factors, ending at 1",
    "gc_rounds": "consistency rounds per view",
    "lambda_geom": "weight of the reprojection penalty",
    "psi": "reprojection error cap in pixels",
    "min_consistent": "views that must agree to keep a fused point",
    "max_reproj": "fusion reprojection gate in pixels",
    "max_rel_depth_diff": "fusion relative depth gate",
    "max_normal_angle": "fusion normal angle gate in degrees",
    "use_nonlocal": "sample propagation candidates from distant regions",
    "use_extensible": "let region extent adapt to match quality",
    "use_prior": "run the planar prior stages",
    "hpm_full": "mine the prior at every pyramid scale",
    "hpm_fast": "mine the prior at the coarsest scale only",
    "workers": f"worker threads (0: ${WORKERS_ENV} or all cores)",
}

# Flag spelling for fields whose name is not the flag itself.
_FLAG_NAMES = {
    "use_nonlocal": "--nonlocal",
    "use_extensible": "--extensible",
    "use_prior": "--prior",
}


def _render_default(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="key=value configuration file; explicit flags "
                             "override it (default: none)")
    group = parser.add_argument_group("pipeline options")
    for field in dataclasses.fields(RunConfig):
        flag = _FLAG_NAMES.get(field.name,
                               "--" + field.name.replace("_", "-"))
        note = f"{_FIELD_HELP[field.name]} (default: " \
               f"{_render_default(field.default)})"
        if field.type is bool or field.type == "bool":
            group.add_argument(flag, dest=field.name, default=None,
                               action=argparse.BooleanOptionalAction,
                               help=note)
        elif field.name == "scales":
            group.add_argument(flag, dest=field.name, default=None,
                               metavar="N,N,...", help=note)
        else:
            typ = int if field.type in (int, "int") else float
            group.add_argument(flag, dest=field.name, default=None,
                               type=typ, metavar="N", help=note)


def _effective_config(parser: argparse.ArgumentParser,
                      args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    overrides = {}
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is None:
            continue
        if field.name == "scales":
            try:
                value = tuple(int(v) for v in str(value).split(",")
                              if v.strip())
            except ValueError:
                parser.error(f"bad --scales value: {value!r}")
        overrides[field.name] = value
    # Asking for one pyramid variant displaces the other unless both were
    # given explicitly (which stays an error).
    if overrides.get("hpm_fast") and "hpm_full" not in overrides:
        overrides["hpm_full"] = False
    if overrides.get("hpm_full") and "hpm_fast" not in overrides:
        overrides["hpm_fast"] = False
    try:
        return dataclasses.replace(cfg, **overrides) if overrides else cfg
    except ValueError as exc:
        parser.error(str(exc))


def _resolve_workers(cfg: RunConfig) -> int:
    workers = cfg.workers
    if workers == 0:
        env = os.environ.get(WORKERS_ENV, "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise FormatError(WORKERS_ENV, 0,
                                  f"expected an integer, got {env!r}")
            if workers < 0:
                raise FormatError(WORKERS_ENV, 0,
                                  f"must be >= 0, got {workers}")
    if workers > 0:
        set_workers(workers)
    return workers


def _progress(scene):
    def report(ref_index, stats):
        line = (f"[{scene[ref_index].name}] {stats.name}"
                f" {stats.seconds:.1f}s cost={stats.mean_cost:.4f}")
        print(line, file=sys.stderr, flush=True)
    return report


# ---------------------------------------------------------------------------
# reconstruct


def cmd_reconstruct(parser, args) -> int:
    cfg = _effective_config(parser, args)
    _resolve_workers(cfg)
    scene = load_scene(args.scene_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    run = run_scene(scene, cfg.propagation(), schedule=cfg.schedule(),
                    prior_cfg=cfg.prior(), use_prior=cfg.use_prior,
                    on_stage=_progress(scene) if not args.quiet else None)
    for view, dnmap in zip(scene.views, run.maps):
        imaging.write_scalar_field(
            out / f"depth_{view.name}.pfm",
            imaging.ScalarField(dnmap.depth, dnmap.valid))
        imaging.write_vector_field(
            out / f"normal_{view.name}.pfm",
            imaging.VectorField(dnmap.normal, dnmap.valid))
    cloud = fusion.fuse(scene, run.maps, cfg.fusion())
    fusion.write_ply(out / "cloud.ply", cloud, ascii_format=args.ascii_ply)
    wall = time.perf_counter() - start

    manifest = run.manifest + (f"points={len(cloud)}\n"
                               f"wall_total={wall:.3f}\n")
    (out / "manifest.txt").write_text(manifest)
    print(f"{len(scene)} views -> {len(cloud)} points in {wall:.1f}s "
          f"({out})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(parser, args) -> int:
    spec = synth.SynthSpec(template=args.template, n_views=args.views,
                           width=args.width, height=args.height,
                           seed=args.seed, noise=args.noise)
    result = synth.synthesize(spec)
    synth.write_scene(result, args.out)
    print(f"{args.template}: {spec.n_views} views "
          f"{spec.width}x{spec.height} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _parse_thresholds(parser, text):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        parser.error(f"bad threshold list: {text!r}")
    if not values or any(v <= 0 for v in values):
        parser.error(f"thresholds must be positive: {text!r}")
    return values


def cmd_eval(parser, args) -> int:
    thresholds = _parse_thresholds(parser, args.thresholds)
    rec = fusion.read_ply(args.reconstruction)
    gt = fusion.read_ply(args.ground_truth)
    results = fusion.evaluate(rec, gt, thresholds)
    lines = []
    for thr, (acc, comp, f1) in zip(thresholds, results):
        print(f"threshold={thr:.4f} accuracy={acc:.2f} "
              f"completeness={comp:.2f} f1={f1:.2f}")
        lines += [f"accuracy@{thr:.4f}={acc:.2f}",
                  f"completeness@{thr:.4f}={comp:.2f}",
                  f"f1@{thr:.4f}={f1:.2f}"]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def _gt_lowtex_cloud(scene_dir: Path, scene) -> fusion.PointCloud:
    """Ground-truth points restricted to the textureless masks, sampled
    like the stored full cloud."""
    pts, nrms = [], []
    stride = 2
    for view in scene.views:
        mask_path = scene_dir / "gt" / f"mask_{view.name}.png"
        if not mask_path.exists():
            continue
        mask = imaging.load_image_gray(mask_path) > 0.5
        if not mask.any():
            continue
        dep = imaging.read_scalar_field(
            scene_dir / "gt" / f"depth_{view.name}.pfm")
        nor = imaging.read_vector_field(
            scene_dir / "gt" / f"normal_{view.name}.pfm")
        cam = view.camera
        kinv = np.linalg.inv(cam.intrinsics)
        ys, xs = np.mgrid[0:cam.height:stride, 0:cam.width:stride]
        sel = dep.valid[::stride, ::stride] & mask[::stride, ::stride]
        if not sel.any():
            continue
        mxy = np.stack([kinv[0, 0] * xs + kinv[0, 2],
                        kinv[1, 1] * ys + kinv[1, 2],
                        np.ones_like(xs, dtype=np.float64)], axis=-1)
        local = mxy[sel] * dep.values[::stride, ::stride][sel][:, None]
        pts.append(cam.to_world(local))
        nrms.append(nor.values[::stride, ::stride][sel] @ cam.rotation)
    if not pts:
        return fusion.PointCloud(points=np.zeros((0, 3)),
                                 normals=np.zeros((0, 3)))
    return fusion.PointCloud(points=np.concatenate(pts),
                             normals=np.concatenate(nrms))


def _median_gt_depth(scene_dir: Path, scene) -> float:
    depths = []
    for view in scene.views:
        dep = imaging.read_scalar_field(
            scene_dir / "gt" / f"depth_{view.name}.pfm")
        depths.append(dep.values[dep.valid])
    stacked = np.concatenate(depths)
    if stacked.size == 0:
        raise FormatError(scene_dir / "gt", 0, "ground truth is empty")
    return float(np.median(stacked))


def cmd_ablate(parser, args) -> int:
    if args.rows.strip().lower() == "all":
        rows = list(ABLATION_ROWS)
    else:
        rows = [r.strip() for r in args.rows.split(",") if r.strip()]
        for row in rows:
            if row not in ABLATION_ROWS:
                parser.error(f"unknown pipeline row {row!r} "
                             f"(valid rows: {', '.join(ABLATION_ROWS)})")
    base = _effective_config(parser, args)
    _resolve_workers(base)

    scene_dir = Path(args.scene_dir)
    scene = load_scene(scene_dir)
    gt_cloud = fusion.read_ply(scene_dir / "gt" / "cloud.ply")
    lowtex_cloud = _gt_lowtex_cloud(scene_dir, scene)
    depth_med = _median_gt_depth(scene_dir, scene)
    fractions = _parse_thresholds(parser, args.thresholds)
    thresholds = tuple(f * depth_med for f in fractions)

    header = (f"{'pipeline':<14}{'threshold':>10}{'accuracy':>10}"
              f"{'completeness':>14}{'f1':>8}")
    if len(lowtex_cloud):
        header += f"{'lowtex-comp':>13}"
    print(header)
    kv = []
    for row in rows:
        cfg = row_config(base, row)
        start = time.perf_counter()
        run = run_scene(scene, cfg.propagation(), schedule=cfg.schedule(),
                        prior_cfg=cfg.prior(), use_prior=cfg.use_prior,
                        on_stage=_progress(scene) if not args.quiet else None)
        cloud = fusion.fuse(scene, run.maps, cfg.fusion())
        wall = time.perf_counter() - start
        kv.append(f"{row}.seconds={wall:.1f}")
        kv.append(f"{row}.points={len(cloud)}")
        if len(cloud) == 0:
            print(f"{row:<14} produced no points")
            continue
        scores = fusion.evaluate(cloud, gt_cloud, thresholds)
        low = (fusion.evaluate(cloud, lowtex_cloud, thresholds)
               if len(lowtex_cloud) else None)
        for i, (thr, (acc, comp, f1)) in enumerate(zip(thresholds, scores)):
            line = f"{row:<14}{thr:>10.4f}{acc:>10.2f}{comp:>14.2f}{f1:>8.2f}"
            kv += [f"{row}.accuracy@{thr:.4f}={acc:.2f}",
                   f"{row}.completeness@{thr:.4f}={comp:.2f}",
                   f"{row}.f1@{thr:.4f}={f1:.2f}"]
            if low is not None:
                line += f"{low[i][1]:>13.2f}"
                kv.append(f"{row}.lowtex_comp@{thr:.4f}={low[i][1]:.2f}")
            print(line)
    if args.out:
        Path(args.out).write_text("\n".join(kv) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dump-config


def cmd_dump_config(parser, args) -> int:
    cfg = _effective_config(parser, args)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpmvs",
        description="Multi-view stereo with non-local propagation and a "
                    "hierarchically mined planar prior.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    p = sub.add_parser("reconstruct",
                       help="estimate depth maps and fuse a point cloud",
                       description="Reconstruct every view of a scene "
                                   "directory (images/ plus cams/), then "
                                   "fuse the maps into cloud.ply.")
    p.add_argument("scene_dir", help="scene directory with images/ and cams/")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for depth maps and the cloud")
    p.add_argument("--ascii-ply", action="store_true",
                   help="write the fused cloud as ASCII PLY "
                        "(default: binary)")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-stage progress (default: off)")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("synth", help="render a synthetic scene with ground "
                                     "truth",
                       description="Render one of the built-in plane "
                                   "arrangements to a scene directory, "
                                   "including exact depth, normals, masks, "
                                   "and a ground-truth cloud.")
    p.add_argument("--template", required=True, choices=synth.TEMPLATES,
                   help="scene layout to render")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="scene directory to create")
    p.add_argument("--views", type=int, default=3, metavar="N",
                   help="number of cameras (default: 3)")
    p.add_argument("--width", type=int, default=640, metavar="N",
                   help="image width (default: 640)")
    p.add_argument("--height", type=int, default=480, metavar="N",
                   help="image height (default: 480)")
    p.add_argument("--seed", type=int, default=0, metavar="N",
                   help="texture seed (default: 0)")
    p.add_argument("--noise", type=float, default=0.0, metavar="SIGMA",
                   help="additive Gaussian image noise (default: 0.0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a cloud against ground truth",
                       description="Nearest-neighbor accuracy, completeness "
                                   "and F1 between two PLY clouds, printed "
                                   "per distance threshold.")
    p.add_argument("reconstruction", help="reconstructed cloud (PLY)")
    p.add_argument("ground_truth", help="ground-truth cloud (PLY)")
    p.add_argument("--thresholds", default="0.01,0.02,0.05", metavar="T,T,..",
                   help="distance thresholds in world units "
                        "(default: 0.01,0.02,0.05)")
    p.add_argument("--out", metavar="FILE",
                   help="also write the scores as key=value lines "
                        "(default: none)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate",
                       help="run and score named pipeline variants",
                       description="Run selected pipeline variants on a "
                                   "synthetic scene directory and tabulate "
                                   "accuracy, completeness and F1 against "
                                   "its ground-truth cloud. Thresholds are "
                                   "fractions of the median scene depth.")
    p.add_argument("scene_dir",
                   help="scene directory produced by `hpmvs synth`")
    p.add_argument("--rows", default="all", metavar="R,R,..",
                   help=f"variants to run, or 'all' "
                        f"(valid: {', '.join(ABLATION_ROWS)}) "
                        f"(default: all)")
    p.add_argument("--thresholds", default="0.005,0.01",
                   metavar="F,F,..",
                   help="thresholds as fractions of median depth "
                        "(default: 0.005,0.01)")
    p.add_argument("--out", metavar="FILE",
                   help="also write the scores as key=value lines "
                        "(default: none)")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-stage progress (default: off)")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-config",
                       help="print the effective configuration",
                       description="Print the configuration that would be "
                                   "used, after applying --config and "
                                   "flags, in the config file format.")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_dump_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(parser, args)
    except InsufficientViewsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIEWS
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except HpmvsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
