"""Gradient descent over element transforms, hierarchical in resolution,
plus silhouette-to-outline fitting.

Adam runs three parameter groups (translate / scale / rotate) with their own
learning rates in canvas units, so the same step sizes work at every level of
the resolution schedule. Outline sampling is frozen at the start of each
level (see render.prepare_sampling): within a level the loss is a smooth
function of the transforms, and a level switch may move the loss
discontinuously, which is expected and not treated as divergence.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .errors import (CheckpointError, EmptyContainer, NonConvergence,
                     ValidationError)
from .losses import (ContainerSource, ForceSpec, LossWeights, TotalLoss,
                     UniformConfig, total_loss)
from .render import (CANVAS_UNITS, RenderConfig, prepare_sampling, rasterize)
from .vecgeom import (BezierShape, ElementTransform, flatten_segments,
                      polyline_sdf, transform_points)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters; learning rates are per-epoch step scales in
    canvas units (rotation in radians)."""

    lr_translate: float = 1.1
    lr_scale: float = 0.02
    lr_rotate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    grad_clip: float | None = None
    reset_moments_on_level_change: bool = False
    scale_floor: float = 1e-3

    def __post_init__(self):
        for name in ("lr_translate", "lr_scale", "lr_rotate", "eps"):
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValidationError(f"{name} must be in [0, 1)")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0.0:
            raise ValidationError("grad_clip must be positive when set")


@dataclass(frozen=True)
class ResolutionSchedule:
    """Ordered (resolution, epoch_count) levels, coarse to fine."""

    levels: tuple[tuple[int, int], ...] = ((50, 67), (200, 67), (600, 66))

    def __post_init__(self):
        if not self.levels:
            raise ValidationError("schedule needs at least one level")
        norm = []
        for res, cnt in self.levels:
            if int(res) < 8:
                raise ValidationError(f"schedule resolution {res} below 8")
            if int(cnt) < 1:
                raise ValidationError(f"schedule epoch count {cnt} must be >= 1")
            norm.append((int(res), int(cnt)))
        object.__setattr__(self, "levels", tuple(norm))

    @property
    def total_epochs(self) -> int:
        return sum(c for _, c in self.levels)

    @staticmethod
    def constant(resolution: int, epochs: int) -> "ResolutionSchedule":
        return ResolutionSchedule(((resolution, epochs),))

    @staticmethod
    def hierarchical(epochs: int = 200,
                     resolutions: tuple[int, ...] = (50, 200, 600)) -> "ResolutionSchedule":
        """Split epochs evenly across resolutions; remainders go to the
        earlier (cheaper) levels."""
        n = len(resolutions)
        base, rem = divmod(epochs, n)
        if base == 0:
            raise ValidationError(f"{epochs} epochs cannot cover {n} levels")
        counts = [base + (1 if i < rem else 0) for i in range(n)]
        return ResolutionSchedule(tuple(zip(resolutions, counts)))


@dataclass(eq=False)
class Scene:
    """Everything static about a job: geometry, container, loss setup."""

    shapes: list[BezierShape]
    container: ContainerSource
    weights: LossWeights = LossWeights()
    uniform: UniformConfig = UniformConfig()
    force: ForceSpec | None = None
    render: RenderConfig = RenderConfig()
    fills: list[str | None] | None = None

    def __post_init__(self):
        if not self.shapes:
            raise ValidationError("scene has no shapes")
        if self.fills is not None and len(self.fills) != len(self.shapes):
            raise ValidationError("fills/shapes length mismatch")


@dataclass(eq=False)
class AdamState:
    t: int
    m_t: np.ndarray
    v_t: np.ndarray
    m_s: np.ndarray
    v_s: np.ndarray
    m_r: np.ndarray
    v_r: np.ndarray

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(0, np.zeros((n, 2)), np.zeros((n, 2)),
                         np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))


@dataclass(eq=False)
class RunState:
    """Mutable optimization state; serializable at level boundaries."""

    transforms: list[ElementTransform]
    adam: AdamState
    epoch: int = 0
    level: int = 0
    epoch_in_level: int = 0
    frames_emitted: int = 0
    loss_history: list[dict] = dc_field(default_factory=list)

    @staticmethod
    def fresh(transforms: list[ElementTransform]) -> "RunState":
        return RunState(transforms=list(transforms),
                        adam=AdamState.zeros(len(transforms)))

    def to_json(self) -> str:
        a = self.adam
        doc = {
            "version": 1,
            "epoch": self.epoch,
            "level": self.level,
            "epoch_in_level": self.epoch_in_level,
            "frames_emitted": self.frames_emitted,
            "adam": {"t": a.t, "m_t": a.m_t.tolist(), "v_t": a.v_t.tolist(),
                     "m_s": a.m_s.tolist(), "v_s": a.v_s.tolist(),
                     "m_r": a.m_r.tolist(), "v_r": a.v_r.tolist()},
            "transforms": [
                {"t": list(x.t), "s": x.s, "r": x.r, "scale_mode": x.scale_mode,
                 "rotation_mode": x.rotation_mode,
                 "rotation_range": (list(x.rotation_range)
                                    if x.rotation_range else None)}
                for x in self.transforms],
            "loss_history": self.loss_history,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str, n_expected: int | None = None) -> "RunState":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"checkpoint is not valid JSON: {e}") from e
        if not isinstance(doc, dict) or doc.get("version") != 1:
            raise CheckpointError("unsupported or missing checkpoint version")
        try:
            transforms = [
                ElementTransform(t=tuple(x["t"]), s=x["s"], r=x["r"],
                                 scale_mode=x["scale_mode"],
                                 rotation_mode=x["rotation_mode"],
                                 rotation_range=(tuple(x["rotation_range"])
                                                 if x["rotation_range"] else None))
                for x in doc["transforms"]]
            a = doc["adam"]
            adam = AdamState(int(a["t"]), np.array(a["m_t"]), np.array(a["v_t"]),
                             np.array(a["m_s"]), np.array(a["v_s"]),
                             np.array(a["m_r"]), np.array(a["v_r"]))
            state = RunState(transforms=transforms, adam=adam,
                             epoch=int(doc["epoch"]), level=int(doc["level"]),
                             epoch_in_level=int(doc["epoch_in_level"]),
                             frames_emitted=int(doc["frames_emitted"]),
                             loss_history=list(doc["loss_history"]))
        except (KeyError, TypeError, IndexError) as e:
            raise CheckpointError(f"malformed checkpoint field: {e}") from e
        if state.epoch_in_level != 0:
            raise CheckpointError("checkpoint was not taken at a level boundary")
        if n_expected is not None and len(transforms) != n_expected:
            raise CheckpointError(
                f"checkpoint has {len(transforms)} elements, job has {n_expected}")
        if adam.m_t.shape != (len(transforms), 2):
            raise CheckpointError("adam moment shapes do not match element count")
        return state


def _canvas_clamp(shape: BezierShape, xf: ElementTransform) -> ElementTransform:
    """Shift translation minimally so the transformed control hull stays on
    the canvas (cubic curves live inside their control hull). Keeps open
    canvas force runs from sliding the scene off every loss's support."""
    pts = transform_points(shape.segments.reshape(-1, 2), xf)
    tx, ty = xf.t
    for axis in (0, 1):
        lo = pts[:, axis].min()
        hi = pts[:, axis].max()
        if hi - lo >= CANVAS_UNITS:
            continue
        shift = 0.0
        if lo < 0.0:
            shift = -lo
        elif hi > CANVAS_UNITS:
            shift = CANVAS_UNITS - hi
        if shift != 0.0:
            if axis == 0:
                tx += shift
            else:
                ty += shift
    if (tx, ty) == xf.t:
        return xf
    return replace(xf, t=(tx, ty))


def step(scene: Scene, state: RunState, fld, sampling,
         cfg: OptimizerConfig) -> TotalLoss:
    """One epoch: rasterize, evaluate the weighted loss, Adam-update the
    free parameter groups, project constraints. Mutates ``state``."""
    buffer = rasterize(scene.shapes, state.transforms, scene.render,
                       fld.resolution, sampling)
    tl = total_loss(scene.shapes, state.transforms, buffer, fld,
                    scene.weights, scene.uniform, scene.force)
    g = tl.gradients
    gt, gs, gr = g.translate, g.scale, g.rotate
    if cfg.grad_clip is not None:
        for arr in (gt, gs, gr):
            norm = float(np.sqrt(np.sum(arr * arr)))
            if norm > cfg.grad_clip:
                arr *= cfg.grad_clip / norm

    xs = state.transforms
    t_arr = np.array([x.t for x in xs])
    s_arr = np.array([x.s for x in xs])
    r_arr = np.array([x.r for x in xs])
    free_s = np.array([x.scale_mode == "free" for x in xs])
    free_r = np.array([x.rotation_mode != "fixed" for x in xs])

    a = state.adam
    a.t += 1
    c1 = 1.0 - cfg.beta1 ** a.t
    c2 = 1.0 - cfg.beta2 ** a.t

    a.m_t = cfg.beta1 * a.m_t + (1 - cfg.beta1) * gt
    a.v_t = cfg.beta2 * a.v_t + (1 - cfg.beta2) * gt * gt
    t_arr = t_arr - cfg.lr_translate * (a.m_t / c1) / (np.sqrt(a.v_t / c2) + cfg.eps)

    if free_s.any():
        a.m_s[free_s] = cfg.beta1 * a.m_s[free_s] + (1 - cfg.beta1) * gs[free_s]
        a.v_s[free_s] = cfg.beta2 * a.v_s[free_s] + (1 - cfg.beta2) * gs[free_s] ** 2
        upd = cfg.lr_scale * (a.m_s[free_s] / c1) / (np.sqrt(a.v_s[free_s] / c2) + cfg.eps)
        s_arr[free_s] = np.maximum(s_arr[free_s] - upd, cfg.scale_floor)
    if free_r.any():
        a.m_r[free_r] = cfg.beta1 * a.m_r[free_r] + (1 - cfg.beta1) * gr[free_r]
        a.v_r[free_r] = cfg.beta2 * a.v_r[free_r] + (1 - cfg.beta2) * gr[free_r] ** 2
        upd = cfg.lr_rotate * (a.m_r[free_r] / c1) / (np.sqrt(a.v_r[free_r] / c2) + cfg.eps)
        r_arr[free_r] = r_arr[free_r] - upd

    new = []
    for i, x in enumerate(xs):
        r = r_arr[i]
        if x.rotation_mode == "range":
            r = min(max(r, x.rotation_range[0]), x.rotation_range[1])
        cand = replace(x, t=(float(t_arr[i, 0]), float(t_arr[i, 1])),
                       s=float(s_arr[i]), r=float(r))
        new.append(_canvas_clamp(scene.shapes[i], cand))
    state.transforms = new
    state.loss_history.append(tl.components())
    return tl


def run(scene: Scene, init: list[ElementTransform] | RunState,
        schedule: ResolutionSchedule = ResolutionSchedule(),
        cfg: OptimizerConfig = OptimizerConfig(),
        callback=None, callback_stride: int = 1,
        checkpoint_path: str | None = None):
    """Drive the full schedule. Returns (transforms, report).

    ``callback(epoch, state)`` fires at epoch 0 (initial layout) and then at
    every ``callback_stride``-th epoch. Checkpoints are written at level
    boundaries only (resuming mid-level would re-freeze outline sampling at a
    different point than the uninterrupted run). ``init`` may be a transform
    list (fresh run) or a RunState loaded from a checkpoint.
    """
    if schedule.total_epochs != cfg.epochs:
        raise ValidationError(
            f"schedule epochs {schedule.total_epochs} != optimizer epochs {cfg.epochs}")
    if callback_stride < 1:
        raise ValidationError("callback_stride must be >= 1")
    state = init if isinstance(init, RunState) else RunState.fresh(init)
    if len(state.transforms) != len(scene.shapes):
        raise ValidationError("transform count does not match scene shapes")

    def checkpoint():
        if checkpoint_path is not None:
            with open(checkpoint_path, "w", encoding="utf-8") as f:
                f.write(state.to_json())

    level_stats = []
    if state.epoch == 0 and callback is not None:
        callback(0, state)
    for li in range(state.level, len(schedule.levels)):
        res, cnt = schedule.levels[li]
        state.level = li
        fld = scene.container.field(res)
        if (cfg.reset_moments_on_level_change and li > 0
                and state.epoch_in_level == 0):
            state.adam = AdamState.zeros(len(scene.shapes))
        sampling = prepare_sampling(scene.shapes, state.transforms,
                                    scene.render, res)
        t0 = time.perf_counter()
        for e in range(state.epoch_in_level, cnt):
            step(scene, state, fld, sampling, cfg)
            state.epoch += 1
            state.epoch_in_level = e + 1
            if callback is not None and state.epoch % callback_stride == 0:
                callback(state.epoch, state)
        seconds = time.perf_counter() - t0
        level_stats.append({"resolution": res, "epochs": cnt, "seconds": seconds})
        state.level = li + 1
        state.epoch_in_level = 0
        checkpoint()
    report = {
        "levels": level_stats,
        "total_seconds": sum(l["seconds"] for l in level_stats),
        "epochs": state.epoch,
        "final": state.loss_history[-1] if state.loss_history else None,
    }
    return state.transforms, report


# ---------------------------------------------------------------------------
# outline fitting
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FitResult:
    shape: BezierShape
    mse: float
    converged: bool
    iterations: int
    history: list[float]


def _circle_params(center: np.ndarray, radius: float, n: int):
    theta = 2.0 * np.pi * np.arange(n) / n
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    tang = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    handle = (4.0 / 3.0) * math.tan(math.pi / (2.0 * n)) * radius
    anchors = center + radius * ring
    h1 = anchors + handle * tang
    h2 = np.roll(anchors, -1, axis=0) - handle * np.roll(tang, -1, axis=0)
    return anchors, h1, h2


def _assemble(anchors, h1, h2):
    return np.stack([anchors, h1, h2, np.roll(anchors, -1, axis=0)], axis=1)


def fit_outline(silhouette: np.ndarray, n_segments: int = 20,
                iterations: int = 200, kappa: float = 0.75, lr: float = 0.5,
                mse_threshold: float | None = 0.02,
                flatten_tolerance: float = 0.25, callback=None) -> FitResult:
    """Fit one closed cubic loop to a binary silhouette by gradient descent.

    Starts from a circle at the silhouette centroid with matching area, then
    runs Adam on all 3N control points (anchors shared between neighboring
    segments, so the loop stays closed by construction) against the MSE
    between the soft-rasterized mask and the silhouette. Raises
    EmptyContainer for a blank silhouette, ValidationError when the
    silhouette has several connected components, and NonConvergence when the
    final MSE exceeds ``mse_threshold`` (None disables the check).
    ``callback(iteration, segments)`` fires with the assembled control points
    of every iterate, the final one included.
    """
    mask = np.asarray(silhouette).astype(bool)
    if mask.ndim != 2:
        raise ValidationError(f"silhouette must be 2D, got shape {mask.shape}")
    area = int(mask.sum())
    if area == 0:
        raise EmptyContainer("silhouette has no object pixels")
    _, ncomp = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if ncomp != 1:
        raise ValidationError(
            f"silhouette has {ncomp} connected components; fit needs exactly one")
    if n_segments < 3:
        raise ValidationError("need at least 3 segments for a closed loop")

    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    center = np.array([xs.mean() + 0.5, ys.mean() + 0.5])
    radius = math.sqrt(area / math.pi)
    anchors, h1, h2 = _circle_params(center, radius, n_segments)

    target = mask.astype(np.float64)
    n_px = float(h * w)
    target_energy = float(np.sum(target))  # binary, so sum == sum of squares
    pad = math.ceil(6.0 * kappa)
    params = np.concatenate([anchors, h1, h2], axis=0)  # (3N, 2)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    history: list[float] = []
    n = n_segments
    sampling = None

    def forward(segs, sampling, want_grad=True):
        verts = np.einsum("vj,vjd->vd", sampling.basis, segs[sampling.seg])
        x0 = max(int(np.floor(verts[:, 0].min() - pad)), 0)
        y0 = max(int(np.floor(verts[:, 1].min() - pad)), 0)
        x1 = min(int(np.ceil(verts[:, 0].max() + pad)), w)
        y1 = min(int(np.ceil(verts[:, 1].max() + pad)), h)
        if x1 <= x0 or y1 <= y0:
            raise NonConvergence("fit outline left the silhouette image")
        px = np.tile(x0 + 0.5 + np.arange(x1 - x0, dtype=np.float64), y1 - y0)
        py = np.repeat(y0 + 0.5 + np.arange(y1 - y0, dtype=np.float64), x1 - x0)
        d, qx, qy, seg_idx, u = polyline_sdf(verts, px, py)
        alpha = expit(-d / kappa)
        tgt = target[y0:y1, x0:x1].ravel()
        diff = alpha - tgt
        # pixels outside the bbox have alpha ~ 0, so they contribute target^2
        outside = target_energy - float(np.sum(tgt))
        mse = (float(np.sum(diff * diff)) + outside) / n_px
        if not want_grad:
            return mse, None

        ga = 2.0 * diff / n_px
        sprime = alpha * expit(d / kappa)
        gphi = ga * sprime * (-1.0 / kappa)
        safe = np.where(d == 0.0, 1.0, d)
        wx = np.where(d == 0.0, 0.0, (px - qx) / safe)
        wy = np.where(d == 0.0, 0.0, (py - qy) / safe)

        vgrad = np.zeros_like(verts)
        ja = seg_idx
        jb = (seg_idx + 1) % verts.shape[0]
        np.add.at(vgrad[:, 0], ja, gphi * (-wx) * (1.0 - u))
        np.add.at(vgrad[:, 1], ja, gphi * (-wy) * (1.0 - u))
        np.add.at(vgrad[:, 0], jb, gphi * (-wx) * u)
        np.add.at(vgrad[:, 1], jb, gphi * (-wy) * u)

        cgrad = np.zeros((n, 4, 2))
        for c in range(4):
            np.add.at(cgrad[:, c, 0], sampling.seg, sampling.basis[:, c] * vgrad[:, 0])
            np.add.at(cgrad[:, c, 1], sampling.seg, sampling.basis[:, c] * vgrad[:, 1])
        # each anchor is shared: end of segment k-1 and start of segment k
        ganchor = cgrad[:, 0] + np.roll(cgrad[:, 3], 1, axis=0)
        return mse, np.concatenate([ganchor, cgrad[:, 1], cgrad[:, 2]], axis=0)

    for it in range(iterations):
        segs = _assemble(params[:n], params[n:2 * n], params[2 * n:])
        if callback is not None:
            callback(it, segs)
        if sampling is None or it % 25 == 0:
            _, sampling = flatten_segments(segs, flatten_tolerance, with_params=True)
        mse, grad = forward(segs, sampling)
        history.append(mse)
        tstep = it + 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        params = params - lr * (m / (1 - beta1 ** tstep)) / (
            np.sqrt(v / (1 - beta2 ** tstep)) + eps)

    segs = _assemble(params[:n], params[n:2 * n], params[2 * n:])
    if callback is not None:
        callback(iterations, segs)
    _, sampling = flatten_segments(segs, flatten_tolerance, with_params=True)
    mse, _ = forward(segs, sampling, want_grad=False)
    history.append(mse)
    shape = BezierShape(segs, id="fit")
    converged = mse <= (0.02 if mse_threshold is None else mse_threshold)
    if mse_threshold is not None and not converged:
        raise NonConvergence(
            f"fit MSE {mse:.5f} above threshold {mse_threshold} after {iterations} iterations")
    return FitResult(shape=shape, mse=float(mse), converged=converged,
                     iterations=iterations, history=history)
