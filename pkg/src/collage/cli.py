"""Command line interface: run jobs, score layouts, fit outlines, compare runs.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
3 numerical divergence (non-finite loss or gradients).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .config import JobConfig, load_config
from .errors import (CollageError, NonFiniteGradient, ParseError,
                     ValidationError)
from .initialize import extract_skeleton, place_elements, place_random
from .losses import ContainerSource
from .metrics import compare, evaluate
from .optimize import RunState, Scene, fit_outline, run
from .raster_io import load_gray, load_mask, save_color, save_gray
from .render import composite_color, rasterize
from .svgio import export_svg, load_shapes
from .vecgeom import (BezierShape, ElementTransform, Polyline,
                      apply_transform, flatten)

CANVAS = 600.0
CANVAS_MARGIN = 0.03     # container outlines keep 3% clearance when fitted
SKELETON_RESOLUTION = 200


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def container_source_from_file(path: str) -> tuple[ContainerSource, Polyline | None]:
    """Build a container from 'canvas', an SVG outline, or a PNG mask.

    SVG outlines are aspect-fit onto the 600-unit canvas with a small margin;
    the fitted polyline is also returned for use as an export overlay.
    """
    if path == "canvas":
        return ContainerSource.full_canvas(), None
    ext = os.path.splitext(path)[1].lower()
    if ext == ".svg":
        loaded = load_shapes(path)[0]
        original = apply_transform(loaded.shape,
                                   ElementTransform(t=tuple(loaded.centroid)))
        poly = flatten(original, 0.25)
        v = poly.vertices
        lo = v.min(axis=0)
        hi = v.max(axis=0)
        span = max(hi[0] - lo[0], hi[1] - lo[1])
        f = CANVAS * (1.0 - 2.0 * CANVAS_MARGIN) / span
        center = 0.5 * (lo + hi)
        fitted = Polyline((v - center) * f + CANVAS / 2.0, closed=True)
        return ContainerSource.from_polyline(fitted), fitted
    if ext == ".png":
        return ContainerSource.from_image(load_gray(path)), None
    raise ParseError(f"unsupported container file type {ext!r} "
                     "(use .svg, .png, or 'canvas')")


def load_job_elements(cfg: JobConfig):
    """Materialize every element instance: shapes, transform templates, fills."""
    shapes: list[BezierShape] = []
    templates: list[ElementTransform] = []
    fills: list[str | None] = []
    for spec in cfg.elements:
        ext = os.path.splitext(spec.path)[1].lower()
        stem = os.path.splitext(os.path.basename(spec.path))[0]
        if ext == ".svg":
            loaded = load_shapes(spec.path)
            if len(loaded) > 1:
                print(f"note: {spec.path} has {len(loaded)} paths; using the first",
                      file=sys.stderr)
            base, fill = loaded[0].shape, loaded[0].fill
        elif ext == ".png":
            result = fit_outline(load_mask(spec.path),
                                 n_segments=cfg.fit.n_segments,
                                 iterations=cfg.fit.iterations,
                                 kappa=cfg.fit.kappa,
                                 mse_threshold=cfg.fit.threshold)
            base, _ = result.shape.recentered()
            fill = None
        else:
            raise ParseError(f"unsupported element file type {ext!r} in {spec.path}")
        r = spec.rotation
        if spec.rotation_mode == "range":
            lo, hi = spec.rotation_range
            r = min(max(r, lo), hi)
        tmpl = ElementTransform(s=spec.scale, r=r, scale_mode=spec.scale_mode,
                                rotation_mode=spec.rotation_mode,
                                rotation_range=spec.rotation_range)
        for i in range(spec.count):
            shapes.append(base.with_id(f"{stem}-{i}" if spec.count > 1 else stem))
            templates.append(tmpl)
            fills.append(spec.display_color or fill)
    return shapes, templates, fills


def initial_transforms(cfg: JobConfig, scene: Scene,
                       templates: list[ElementTransform]):
    fld = scene.container.field(SKELETON_RESOLUTION)
    if cfg.init == "mat":
        skeleton = extract_skeleton(fld, max_points=4 * len(scene.shapes))
        return place_elements(skeleton, scene.shapes, cfg.seed, templates, fld)
    return place_random(fld, scene.shapes, cfg.seed, templates)


# ---------------------------------------------------------------------------
# job driver
# ---------------------------------------------------------------------------

def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def run_job(cfg: JobConfig, deterministic: bool = False, quiet: bool = False,
            resume: str | None = None) -> dict:
    """Execute a full job: ingest, initialize, optimize, export, score.

    Returns a dict with final transforms, the optimization report, and the
    QualityReport. With ``deterministic`` the metrics JSON omits wall time so
    repeated runs are byte-identical.
    """
    t_begin = time.perf_counter()
    source, container_poly = container_source_from_file(cfg.container)
    shapes, templates, fills = load_job_elements(cfg)
    scene = Scene(shapes=shapes, container=source, weights=cfg.weights,
                  uniform=cfg.uniform, force=cfg.force, render=cfg.render,
                  fills=fills)

    if resume is not None:
        try:
            with open(resume, "r", encoding="utf-8") as f:
                init = RunState.from_json(f.read(), n_expected=len(shapes))
        except OSError as e:
            raise ParseError(f"cannot read checkpoint: {e}") from e
        if not quiet:
            print(f"resuming at epoch {init.epoch} (level {init.level})")
    else:
        init = initial_transforms(cfg, scene, templates)

    out = cfg.outputs
    callback = None
    if out.frames_dir is not None:
        frames_dir = cfg.resolve(out.frames_dir)
        os.makedirs(frames_dir, exist_ok=True)

        def callback(epoch, state):
            buf = rasterize(shapes, state.transforms, cfg.render,
                            out.frame_resolution)
            name = os.path.join(frames_dir, f"frame_{state.frames_emitted:04d}.png")
            save_gray(name, buf.composite_bw)
            state.frames_emitted += 1

    checkpoint_path = None
    if out.checkpoint is not None:
        checkpoint_path = cfg.resolve(out.checkpoint)
        _ensure_parent(checkpoint_path)

    transforms, report = run(scene, init, cfg.schedule, cfg.optimizer,
                             callback=callback, callback_stride=out.frame_stride,
                             checkpoint_path=checkpoint_path)
    quality = evaluate(shapes, transforms, source, 600)
    total_time = time.perf_counter() - t_begin

    if out.final_svg is not None:
        path = cfg.resolve(out.final_svg)
        _ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(export_svg(shapes, transforms, fills, container_poly))
    if out.final_png is not None:
        path = cfg.resolve(out.final_png)
        _ensure_parent(path)
        buf = rasterize(shapes, transforms, cfg.render, 600)
        save_color(path, composite_color(buf, fills))
    if out.metrics_json is not None:
        path = cfg.resolve(out.metrics_json)
        _ensure_parent(path)
        extra = None if deterministic else {"time_s": total_time}
        with open(path, "w", encoding="utf-8") as f:
            f.write(quality.to_json(extra=extra))

    if not quiet:
        for lv in report["levels"]:
            print(f"level {lv['resolution']}x{lv['resolution']}: "
                  f"{lv['epochs']} epochs in {lv['seconds']:.2f}s")
        fin = report["final"] or {}
        print(f"final loss {fin.get('total', float('nan')):.6g} "
              f"(containment {fin.get('containment', 0):.6g}, "
              f"overlap {fin.get('overlap_smooth', 0):.6g} "
              f"[{fin.get('overlap_count', 0)} px], "
              f"uniform {fin.get('uniform', 0):.6g}, "
              f"force {fin.get('force', 0):.6g})")
        print(f"metrics @600: LC {quality.lc:.4f} OO {quality.oo:.4f} "
              f"EA {quality.ea:.4f} L-nU {quality.l_nu:.4g}")
    return {"transforms": transforms, "report": report, "quality": quality,
            "time_s": total_time}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    run_job(cfg, deterministic=args.deterministic, quiet=args.quiet,
            resume=args.resume)
    return 0


def cmd_metrics(args) -> int:
    loaded = load_shapes(args.layout, skip_ids=("container",))
    shapes = [ls.shape for ls in loaded]
    transforms = [ElementTransform(t=tuple(ls.centroid)) for ls in loaded]
    source, _ = container_source_from_file(args.container)
    report = evaluate(shapes, transforms, source, resolution=args.resolution)
    text = report.to_json()
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_fit(args) -> int:
    mask = load_mask(args.silhouette)
    result = fit_outline(mask, n_segments=args.segments,
                         iterations=args.iterations, kappa=args.kappa,
                         mse_threshold=args.threshold)
    h, w = mask.shape
    svg = export_svg([result.shape], [ElementTransform()], fills=["#333333"],
                     canvas=(float(w), float(h)))
    _ensure_parent(args.output)
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(svg)
    print(f"fit MSE {result.mse:.5f} with {args.segments} segments "
          f"-> {args.output}")
    return 0


def cmd_compare(args) -> int:
    docs = []
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as f:
                docs.append(json.load(f))
        except OSError as e:
            raise ParseError(f"cannot read report: {e}") from e
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from e
    labels = (args.labels.split(",") if args.labels
              else [os.path.splitext(os.path.basename(p))[0] for p in args.reports])
    if len(labels) != len(docs):
        raise ValidationError(f"{len(labels)} labels for {len(docs)} reports")
    table = compare(docs, labels)
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(table)
    else:
        sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are input errors, exit 1
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="collage",
                description="Pack vector shapes into a container by "
                            "differentiable rasterization")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a packing job from a TOML config")
    pr.add_argument("config")
    pr.add_argument("--deterministic", action="store_true",
                    help="omit wall time from metrics JSON for byte-stable output")
    pr.add_argument("--resume", metavar="CHECKPOINT", default=None)
    pr.add_argument("--quiet", action="store_true")
    pr.set_defaults(fn=cmd_run)

    pm = sub.add_parser("metrics", help="score a layout SVG against a container")
    pm.add_argument("layout")
    pm.add_argument("--container", required=True,
                    help="container file (.svg/.png) or 'canvas'")
    pm.add_argument("--resolution", type=int, default=600)
    pm.add_argument("-o", "--output", default=None)
    pm.set_defaults(fn=cmd_metrics)

    pf = sub.add_parser("fit", help="fit a closed cubic outline to a silhouette PNG")
    pf.add_argument("silhouette")
    pf.add_argument("-n", "--segments", type=int, default=20)
    pf.add_argument("-o", "--output", required=True)
    pf.add_argument("--iterations", type=int, default=200)
    pf.add_argument("--kappa", type=float, default=0.75)
    pf.add_argument("--threshold", type=float, default=0.02)
    pf.set_defaults(fn=cmd_fit)

    pc = sub.add_parser("compare", help="tabulate metrics JSON reports as CSV")
    pc.add_argument("reports", nargs="+")
    pc.add_argument("-o", "--output", default=None)
    pc.add_argument("--labels", default=None,
                    help="comma-separated row labels (default: file stems)")
    pc.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NonFiniteGradient as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except CollageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
