"""Job configuration: TOML loading, validation, defaults, and dumping.

Unknown keys are rejected with their dotted path so typos fail loudly instead
of silently running with defaults. Relative paths resolve against the config
file's directory. ``load_config(dump_config(cfg))`` reproduces ``cfg``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field as dc_field

import tomli

from .errors import ParseError, ValidationError
from .losses import ForceSpec, LossWeights, UniformConfig
from .optimize import OptimizerConfig, ResolutionSchedule
from .render import RenderConfig


@dataclass(frozen=True)
class ElementSpec:
    """One shape file and how many instances of it join the layout.

    ``scale`` is the initial (or, with scale_mode="fixed", permanent) scalar
    applied to the file's local coordinates. Rotation values are radians.
    """

    path: str
    count: int = 1
    display_color: str | None = None
    scale_mode: str = "free"
    scale: float = 1.0
    rotation_mode: str = "free"
    rotation: float = 0.0
    rotation_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError(f"element count must be >= 1, got {self.count}")
        if not self.scale > 0.0:
            raise ValidationError(f"element scale must be positive, got {self.scale}")
        if self.scale_mode not in ("free", "fixed"):
            raise ValidationError(f"unknown scale_mode {self.scale_mode!r}")
        if self.rotation_mode not in ("free", "fixed", "range"):
            raise ValidationError(f"unknown rotation_mode {self.rotation_mode!r}")
        if (self.rotation_mode == "range") != (self.rotation_range is not None):
            raise ValidationError("rotation_range must be given exactly when "
                                  "rotation_mode='range'")
        if self.rotation_range is not None:
            lo, hi = self.rotation_range
            if not lo <= hi:
                raise ValidationError(f"rotation_range lo {lo} > hi {hi}")
            object.__setattr__(self, "rotation_range", (float(lo), float(hi)))


@dataclass(frozen=True)
class FitConfig:
    """Outline fitting settings for PNG silhouette elements."""

    n_segments: int = 20
    iterations: int = 200
    kappa: float = 0.75
    threshold: float = 0.02

    def __post_init__(self):
        if self.n_segments < 3:
            raise ValidationError("fit n_segments must be >= 3")
        if self.iterations < 1:
            raise ValidationError("fit iterations must be >= 1")
        if not self.kappa > 0.0:
            raise ValidationError("fit kappa must be positive")
        if not self.threshold > 0.0:
            raise ValidationError("fit threshold must be positive")


@dataclass(frozen=True)
class OutputSpec:
    final_svg: str | None = None
    final_png: str | None = None
    metrics_json: str | None = None
    frames_dir: str | None = None
    frame_stride: int = 1
    frame_resolution: int = 300
    checkpoint: str | None = None

    def __post_init__(self):
        if self.frame_stride < 1:
            raise ValidationError("frame_stride must be >= 1")
        if self.frame_resolution < 8:
            raise ValidationError("frame_resolution must be >= 8")


@dataclass(frozen=True)
class JobConfig:
    container: str
    elements: tuple[ElementSpec, ...]
    seed: int = 0
    init: str = "mat"
    weights: LossWeights = LossWeights()
    uniform: UniformConfig = UniformConfig()
    render: RenderConfig = RenderConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: ResolutionSchedule = ResolutionSchedule()
    force: ForceSpec | None = None
    fit: FitConfig = FitConfig()
    outputs: OutputSpec = OutputSpec()
    base_dir: str = dc_field(default=".", compare=False)

    def __post_init__(self):
        if not self.elements:
            raise ValidationError("job needs at least one [[elements]] entry")
        if self.init not in ("mat", "random"):
            raise ValidationError(f"init must be 'mat' or 'random', got {self.init!r}")
        if self.schedule.total_epochs != self.optimizer.epochs:
            raise ValidationError(
                f"schedule epochs {self.schedule.total_epochs} != "
                f"optimizer.epochs {self.optimizer.epochs}")

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    @property
    def total_elements(self) -> int:
        return sum(e.count for e in self.elements)


def _take(table: dict, dotted: str, keys: dict[str, type | tuple]):
    """Pop known keys with type checks; reject leftovers."""
    out = {}
    for name, types in keys.items():
        if name in table:
            v = table.pop(name)
            if types is float and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, types):
                want = types.__name__ if isinstance(types, type) else \
                    "/".join(t.__name__ for t in types)
                raise ValidationError(f"{dotted}.{name} must be {want}, "
                                      f"got {type(v).__name__}")
            out[name] = v
    if table:
        bad = sorted(table)[0]
        raise ValidationError(f"unknown config key {dotted}.{bad}")
    return out


def _pair(v, dotted):
    if (not isinstance(v, list) or len(v) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                       for x in v)):
        raise ValidationError(f"{dotted} must be a two-number array")
    return (float(v[0]), float(v[1]))


def load_config(path: str) -> JobConfig:
    """Parse and validate a TOML job file into a JobConfig."""
    try:
        with open(path, "rb") as f:
            doc = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    except OSError as e:
        raise ParseError(f"cannot read config: {e}") from e
    base = os.path.dirname(os.path.abspath(path))
    return config_from_dict(doc, base_dir=base, origin=path)


def config_from_dict(doc: dict, base_dir: str = ".", origin: str = "config") -> JobConfig:
    doc = dict(doc)
    top = _take(doc, origin, {
        "container": str, "seed": int, "init": str, "elements": list,
        "weights": dict, "uniform": dict, "render": dict, "optimizer": dict,
        "schedule": dict, "force": dict, "fit": dict, "outputs": dict,
    })
    if "container" not in top:
        raise ValidationError("config is missing the 'container' key")
    if "elements" not in top or not top["elements"]:
        raise ValidationError("config needs at least one [[elements]] entry")

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.abspath(os.path.join(base_dir, p))

    elements = []
    for i, raw in enumerate(top["elements"]):
        if not isinstance(raw, dict):
            raise ValidationError(f"elements[{i}] must be a table")
        e = _take(dict(raw), f"elements[{i}]", {
            "path": str, "count": int, "display_color": str, "scale_mode": str,
            "scale": float, "rotation_mode": str, "rotation": float,
            "rotation_range": list,
        })
        if "path" not in e:
            raise ValidationError(f"elements[{i}] is missing 'path'")
        e["path"] = resolve(e["path"])
        if "rotation_range" in e:
            e["rotation_range"] = _pair(e["rotation_range"],
                                        f"elements[{i}].rotation_range")
        elements.append(ElementSpec(**e))

    weights = LossWeights(**_take(dict(top.get("weights", {})), "weights", {
        "alpha": float, "beta": float, "gamma": float, "delta": float}))

    uni_raw = _take(dict(top.get("uniform", {})), "uniform", {
        "kernel_sizes": list, "level_weights": list})
    uni_kw = {}
    if "kernel_sizes" in uni_raw:
        uni_kw["kernel_sizes"] = tuple(int(x) for x in uni_raw["kernel_sizes"])
    if "level_weights" in uni_raw:
        uni_kw["level_weights"] = tuple(float(x) for x in uni_raw["level_weights"])
    uniform = UniformConfig(**uni_kw)

    render_raw = _take(dict(top.get("render", {})), "render", {
        "kappa": float, "tau": float, "padding": int, "flatten_tolerance": float})
    render = RenderConfig(**render_raw)

    opt_raw = _take(dict(top.get("optimizer", {})), "optimizer", {
        "lr_translate": float, "lr_scale": float, "lr_rotate": float,
        "beta1": float, "beta2": float, "eps": float, "epochs": int,
        "grad_clip": float, "reset_moments_on_level_change": bool,
        "scale_floor": float})

    sched_raw = _take(dict(top.get("schedule", {})), "schedule", {"levels": list})
    if "schedule" in top and "levels" in sched_raw:
        levels = []
        for j, lv in enumerate(sched_raw["levels"]):
            if not isinstance(lv, list) or len(lv) != 2:
                raise ValidationError(f"schedule.levels[{j}] must be "
                                      "[resolution, epochs]")
            levels.append((int(lv[0]), int(lv[1])))
        schedule = ResolutionSchedule(tuple(levels))
        if "epochs" not in opt_raw:
            opt_raw["epochs"] = schedule.total_epochs
    else:
        schedule = ResolutionSchedule.hierarchical(opt_raw.get("epochs", 200))
    optimizer = OptimizerConfig(**opt_raw)

    force = None
    if "force" in top:
        f_raw = _take(dict(top["force"]), "force", {
            "kind": str, "vector": list, "point": list, "elements": list})
        if "kind" not in f_raw:
            raise ValidationError("force.kind is required ('directional' or 'point')")
        kw = {"kind": f_raw["kind"]}
        if "vector" in f_raw:
            kw["vector"] = _pair(f_raw["vector"], "force.vector")
        if "point" in f_raw:
            kw["point"] = _pair(f_raw["point"], "force.point")
        if "elements" in f_raw:
            kw["elements"] = tuple(int(x) for x in f_raw["elements"])
        force = ForceSpec(**kw)

    fit = FitConfig(**_take(dict(top.get("fit", {})), "fit", {
        "n_segments": int, "iterations": int, "kappa": float, "threshold": float}))

    outputs = OutputSpec(**_take(dict(top.get("outputs", {})), "outputs", {
        "final_svg": str, "final_png": str, "metrics_json": str,
        "frames_dir": str, "frame_stride": int, "frame_resolution": int,
        "checkpoint": str}))

    container = top["container"]
    if container != "canvas":
        container = resolve(container)
        if not os.path.exists(container):
            raise ValidationError(f"container file not found: {container}")
    for e in elements:
        if not os.path.exists(e.path):
            raise ValidationError(f"element file not found: {e.path}")

    return JobConfig(container=container, elements=tuple(elements),
                     seed=top.get("seed", 0), init=top.get("init", "mat"),
                     weights=weights, uniform=uniform, render=render,
                     optimizer=optimizer, schedule=schedule, force=force,
                     fit=fit, outputs=outputs, base_dir=base_dir)


# ---------------------------------------------------------------------------
# dumping
# ---------------------------------------------------------------------------

def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValidationError(f"cannot serialize non-finite float {v}")
        s = repr(v)
        return s if any(c in s for c in ".eE") else s + ".0"
    if isinstance(v, str):
        return json.dumps(v)  # TOML basic strings share JSON's escapes
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ValidationError(f"cannot serialize {type(v).__name__} to TOML")


def _emit_table(lines, header, pairs, array_table=False):
    rows = [(k, v) for k, v in pairs if v is not None]
    if not rows and header:
        return
    if header:
        lines.append(f"[[{header}]]" if array_table else f"[{header}]")
    for k, v in rows:
        lines.append(f"{k} = {_fmt_value(v)}")
    lines.append("")


def dump_config(cfg: JobConfig) -> str:
    """Serialize a JobConfig to TOML. Paths are written resolved so the dump
    loads identically from anywhere."""
    lines: list[str] = []
    _emit_table(lines, "", [
        ("container", cfg.container),
        ("seed", cfg.seed), ("init", cfg.init)])
    for e in cfg.elements:
        _emit_table(lines, "elements", [
            ("path", e.path), ("count", e.count),
            ("display_color", e.display_color), ("scale_mode", e.scale_mode),
            ("scale", e.scale), ("rotation_mode", e.rotation_mode),
            ("rotation", e.rotation),
            ("rotation_range", list(e.rotation_range) if e.rotation_range else None),
        ], array_table=True)
    w = cfg.weights
    _emit_table(lines, "weights", [("alpha", w.alpha), ("beta", w.beta),
                                   ("gamma", w.gamma), ("delta", w.delta)])
    _emit_table(lines, "uniform", [("kernel_sizes", list(cfg.uniform.kernel_sizes)),
                                   ("level_weights", list(cfg.uniform.level_weights))])
    r = cfg.render
    _emit_table(lines, "render", [("kappa", r.kappa), ("tau", r.tau),
                                  ("padding", r.padding),
                                  ("flatten_tolerance", r.flatten_tolerance)])
    o = cfg.optimizer
    _emit_table(lines, "optimizer", [
        ("lr_translate", o.lr_translate), ("lr_scale", o.lr_scale),
        ("lr_rotate", o.lr_rotate), ("beta1", o.beta1), ("beta2", o.beta2),
        ("eps", o.eps), ("epochs", o.epochs), ("grad_clip", o.grad_clip),
        ("reset_moments_on_level_change", o.reset_moments_on_level_change),
        ("scale_floor", o.scale_floor)])
    _emit_table(lines, "schedule",
                [("levels", [list(lv) for lv in cfg.schedule.levels])])
    if cfg.force is not None:
        f = cfg.force
        _emit_table(lines, "force", [
            ("kind", f.kind),
            ("vector", list(f.vector) if f.vector else None),
            ("point", list(f.point) if f.point else None),
            ("elements", list(f.elements) if f.elements is not None else None)])
    ft = cfg.fit
    _emit_table(lines, "fit", [("n_segments", ft.n_segments),
                               ("iterations", ft.iterations),
                               ("kappa", ft.kappa), ("threshold", ft.threshold)])
    out = cfg.outputs
    _emit_table(lines, "outputs", [
        ("final_svg", out.final_svg), ("final_png", out.final_png),
        ("metrics_json", out.metrics_json), ("frames_dir", out.frames_dir),
        ("frame_stride", out.frame_stride),
        ("frame_resolution", out.frame_resolution),
        ("checkpoint", out.checkpoint)])
    return "\n".join(lines)
