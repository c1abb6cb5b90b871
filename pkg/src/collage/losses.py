"""Image-space losses over coverage buffers, and the container field.

All losses are normalized by the full pixel count (w*h) so their magnitudes
are comparable across resolutions, and all return per-pixel gradient channels
(PixelGrad) that ``render.backward`` pulls back to transform parameters. The
force loss is the exception: it acts on centroids directly and returns
transform-space gradients without touching the rasterizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .errors import (EmptyContainer, KernelTooLarge, NonFiniteGradient,
                     ResolutionMismatch, ValidationError)
from .render import (CANVAS_UNITS, CoverageBuffer, GradientSet, PixelGrad,
                     backward, resolve_resolution)
from .vecgeom import BezierShape, ElementTransform, Polyline, polyline_inside


@dataclass(frozen=True)
class LossWeights:
    """Scene loss = alpha*containment + beta*overlap + gamma*uniformity
    + delta*force."""

    alpha: float = 3e3
    beta: float = 8e4
    gamma: float = 5e-4
    delta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValidationError(f"loss weight {name} must be >= 0, got {v}")


@dataclass(frozen=True)
class UniformConfig:
    """Box-kernel pyramid for the uniformity loss: odd sizes starting at 5,
    step 6, with weights growing toward the larger kernels."""

    kernel_sizes: tuple[int, ...] = (5, 11, 17, 23, 29)
    level_weights: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)

    def __post_init__(self):
        if len(self.kernel_sizes) != len(self.level_weights):
            raise ValidationError("kernel_sizes and level_weights length mismatch")
        if not self.kernel_sizes:
            raise ValidationError("need at least one uniformity kernel")
        last = 0
        for ksz in self.kernel_sizes:
            if ksz % 2 == 0 or ksz <= last:
                raise ValidationError(
                    f"kernel sizes must be odd and strictly increasing, got {self.kernel_sizes}")
            last = ksz
        if any(w <= 0 for w in self.level_weights):
            raise ValidationError("level weights must be positive")


# ---------------------------------------------------------------------------
# container field
# ---------------------------------------------------------------------------

def _signed_edt(interior: np.ndarray) -> np.ndarray:
    """Signed distance in px: negative inside, positive outside. A fully
    interior grid measures depth against the canvas border."""
    if interior.all():
        padded = np.zeros((interior.shape[0] + 2, interior.shape[1] + 2), dtype=bool)
        padded[1:-1, 1:-1] = True
        return -ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    inside_depth = ndimage.distance_transform_edt(interior)
    outside_depth = ndimage.distance_transform_edt(~interior)
    return np.where(interior, -inside_depth, outside_depth)


@dataclass(eq=False)
class ContainerField:
    """The container rasterized at one resolution.

    target_image is the black-on-white reference the composite is matched
    against (0 inside, 1 outside); penalty_weight is 1 inside and 100 outside
    so exterior ink is punished two orders of magnitude harder.
    """

    width: int
    height: int
    scale: float
    interior: np.ndarray          # bool (H, W)
    target_image: np.ndarray      # float
    penalty_weight: np.ndarray    # float
    signed_distance: np.ndarray   # float px, negative inside
    source: "ContainerSource | None" = None

    OUTSIDE_WEIGHT = 100.0

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def interior_count(self) -> int:
        return int(np.count_nonzero(self.interior))

    @staticmethod
    def from_interior(interior: np.ndarray, source=None,
                      scale: float | None = None) -> "ContainerField":
        h, w = interior.shape
        if not interior.any():
            raise EmptyContainer(f"container has no interior pixels at {w}x{h}")
        return ContainerField(
            width=w, height=h,
            scale=scale if scale is not None else w / CANVAS_UNITS,
            interior=interior,
            target_image=np.where(interior, 0.0, 1.0),
            penalty_weight=np.where(interior, 1.0, ContainerField.OUTSIDE_WEIGHT),
            signed_distance=_signed_edt(interior),
            source=source)


@dataclass(frozen=True, eq=False)
class ContainerSource:
    """Resolution-independent container description: a closed polyline in
    canvas units, a grayscale image (dark = interior) aspect-fit onto the
    canvas, or the full canvas itself."""

    kind: str                       # "polyline" | "image" | "full"
    poly: Polyline | None = None
    image: np.ndarray | None = None  # float gray in [0,1]
    threshold: float = 0.5
    _cache: dict = dc_field(default_factory=dict, repr=False)

    @staticmethod
    def from_polyline(poly: Polyline) -> "ContainerSource":
        return ContainerSource(kind="polyline", poly=poly)

    @staticmethod
    def from_image(image: np.ndarray, threshold: float = 0.5) -> "ContainerSource":
        return ContainerSource(kind="image", image=np.asarray(image, dtype=np.float64),
                               threshold=threshold)

    @staticmethod
    def full_canvas() -> "ContainerSource":
        return ContainerSource(kind="full")

    def field(self, resolution) -> ContainerField:
        w, h = resolve_resolution(resolution)
        cached = self._cache.get((w, h))
        if cached is not None:
            return cached
        k = w / CANVAS_UNITS
        if self.kind == "full":
            interior = np.ones((h, w), dtype=bool)
        elif self.kind == "polyline":
            px = (0.5 + np.arange(w)) / k
            py = (0.5 + np.arange(h)) / k
            interior = polyline_inside(self.poly.vertices,
                                       np.tile(px, h), np.repeat(py, w)).reshape(h, w)
        elif self.kind == "image":
            ih, iw = self.image.shape
            f = CANVAS_UNITS / max(iw, ih)      # image px -> canvas units
            ox = 0.5 * (CANVAS_UNITS - f * iw)
            oy = 0.5 * (CANVAS_UNITS - f * ih)
            u = ((0.5 + np.arange(w)) / k - ox) / f - 0.5
            v = ((0.5 + np.arange(h)) / k - oy) / f - 0.5
            gray = ndimage.map_coordinates(
                self.image, [np.repeat(v, w), np.tile(u, h)],
                order=1, mode="constant", cval=1.0)
            interior = (gray < self.threshold).reshape(h, w)
        else:
            raise ValidationError(f"unknown container source kind {self.kind!r}")
        fld = ContainerField.from_interior(interior, source=self, scale=k)
        self._cache[(w, h)] = fld
        return fld


# ---------------------------------------------------------------------------
# individual losses
# ---------------------------------------------------------------------------

def _check_match(buffer: CoverageBuffer, fld: ContainerField):
    if buffer.resolution != fld.resolution:
        raise ResolutionMismatch(
            f"buffer {buffer.resolution} vs container {fld.resolution}")


def containment_loss(buffer: CoverageBuffer,
                     fld: ContainerField) -> tuple[float, PixelGrad]:
    """Weighted MSE between the black-and-white composite and the container
    target: (1/wh) * sum W * (composite - target)^2, W = 100 outside."""
    _check_match(buffer, fld)
    n = buffer.width * buffer.height
    diff = buffer.composite_bw - fld.target_image
    wdiff = fld.penalty_weight * diff
    loss = float(np.sum(wdiff * diff)) / n
    return loss, PixelGrad(composite=(2.0 / n) * wdiff)


@dataclass(frozen=True)
class OverlapResult:
    hard_count: int      # pixels with T strictly above tau
    smooth: float        # hinge surrogate carrying the gradient
    grad: PixelGrad


def overlap_loss(buffer: CoverageBuffer, tau: float | None = None) -> OverlapResult:
    """Overlap = transparency budget violation. The reported quantity is the
    hard count #{T > tau} (tau = one opaque element's deposit, so only true
    multi-coverage trips it); gradients flow through the smooth surrogate
    (1/wh) * sum max(0, T - tau)^2."""
    t_limit = buffer.config.tau if tau is None else tau
    T = buffer.accumulated_transparency
    n = buffer.width * buffer.height
    hard = int(np.count_nonzero(T > t_limit))
    hinge = np.maximum(T - t_limit, 0.0)
    smooth = float(np.sum(hinge * hinge)) / n
    grad = PixelGrad(direct=(2.0 * buffer.config.tau / n) * hinge)
    return OverlapResult(hard_count=hard, smooth=smooth, grad=grad)


def uniform_loss(buffer: CoverageBuffer, fld: ContainerField,
                 cfg: UniformConfig = UniformConfig()) -> tuple[float, PixelGrad]:
    """Multi-scale emptiness of the container interior.

    occupancy = clamp(sum_i alpha_i, 0, 1); for each box kernel k_d,
    D_d = clamp(boxsum_{k_d}(occupancy), 0, 1) and the loss adds
    w_d * sum_{p in interior} (1 - D_d(p)) / (w*h). Gradients pass the clamps
    only strictly inside (0, 1), matching the piecewise-constant regions of
    the clamp exactly.
    """
    _check_match(buffer, fld)
    w, h = buffer.width, buffer.height
    if max(cfg.kernel_sizes) > min(w, h):
        raise KernelTooLarge(
            f"kernel {max(cfg.kernel_sizes)} exceeds resolution {w}x{h}")
    n = w * h
    osum = buffer.accumulated_transparency / buffer.config.tau  # sum_i alpha_i
    occ = np.clip(osum, 0.0, 1.0)
    loss = 0.0
    acc = np.zeros_like(occ)
    interior = fld.interior
    for ksz, wgt in zip(cfg.kernel_sizes, cfg.level_weights):
        box = ndimage.uniform_filter(occ, size=ksz, mode="constant") * (ksz * ksz)
        d_map = np.clip(box, 0.0, 1.0)
        loss += wgt * float(np.sum(1.0 - d_map, where=interior, initial=0.0)) / n
        g_d = np.where(interior & (box > 0.0) & (box < 1.0), -wgt / n, 0.0)
        # boxsum with zero padding is self-adjoint
        acc += ndimage.uniform_filter(g_d, size=ksz, mode="constant") * (ksz * ksz)
    gate = (osum > 0.0) & (osum < 1.0)
    return loss, PixelGrad(direct=np.where(gate, acc, 0.0))


@dataclass(frozen=True)
class ForceSpec:
    """External force on element centroids.

    kind "directional": loss = sum_i c_i . vector (unit vector required);
    pushes centroids along -vector under descent. kind "point": loss =
    sum_i |c_i - point|^2; attracts centroids to the point. ``elements``
    restricts the force to a subset (None = all). Centroids are tracked as
    initial local centroid + translation, so the force never needs the
    rasterizer.
    """

    kind: str
    vector: tuple[float, float] | None = None
    point: tuple[float, float] | None = None
    elements: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind == "directional":
            if self.vector is None:
                raise ValidationError("directional force needs a vector")
            v = (float(self.vector[0]), float(self.vector[1]))
            if abs(math.hypot(*v) - 1.0) > 1e-9:
                raise ValidationError(f"force vector must be unit length, got {v}")
            object.__setattr__(self, "vector", v)
        elif self.kind == "point":
            if self.point is None:
                raise ValidationError("point force needs a point")
            object.__setattr__(self, "point",
                               (float(self.point[0]), float(self.point[1])))
        else:
            raise ValidationError(f"unknown force kind {self.kind!r}")


def force_loss(shapes: list[BezierShape], transforms: list[ElementTransform],
               spec: ForceSpec) -> tuple[float, GradientSet]:
    n = len(shapes)
    which = range(n) if spec.elements is None else spec.elements
    loss = 0.0
    grads = GradientSet.zeros(n)
    for i in which:
        if not 0 <= i < n:
            raise ValidationError(f"force element index {i} out of range")
        c = shapes[i].local_centroid + np.asarray(transforms[i].t)
        if spec.kind == "directional":
            vx, vy = spec.vector
            loss += c[0] * vx + c[1] * vy
            grads.translate[i, 0] += vx
            grads.translate[i, 1] += vy
        else:
            dx, dy = c[0] - spec.point[0], c[1] - spec.point[1]
            loss += dx * dx + dy * dy
            grads.translate[i, 0] += 2.0 * dx
            grads.translate[i, 1] += 2.0 * dy
    return float(loss), grads


# ---------------------------------------------------------------------------
# weighted total
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TotalLoss:
    value: float
    gradients: GradientSet
    containment: float
    overlap_smooth: float
    overlap_count: int
    uniform: float
    force: float

    def components(self) -> dict:
        return {"total": self.value, "containment": self.containment,
                "overlap_smooth": self.overlap_smooth,
                "overlap_count": self.overlap_count,
                "uniform": self.uniform, "force": self.force}


def total_loss(shapes: list[BezierShape], transforms: list[ElementTransform],
               buffer: CoverageBuffer, fld: ContainerField,
               weights: LossWeights = LossWeights(),
               uniform_cfg: UniformConfig = UniformConfig(),
               force: ForceSpec | None = None) -> TotalLoss:
    """Weighted scene loss and its transform gradients.

    Zero-weighted terms are skipped entirely (their component reports 0.0);
    the overlap hard count is always evaluated since reports track it.
    """
    c_val = o_smooth = u_val = f_val = 0.0
    terms: list[tuple[float, PixelGrad]] = []

    ores = overlap_loss(buffer)
    o_count = ores.hard_count
    if weights.beta > 0.0:
        o_smooth = ores.smooth
        terms.append((weights.beta, ores.grad))
    if weights.alpha > 0.0:
        c_val, c_grad = containment_loss(buffer, fld)
        terms.append((weights.alpha, c_grad))
    if weights.gamma > 0.0:
        u_val, u_grad = uniform_loss(buffer, fld, uniform_cfg)
        terms.append((weights.gamma, u_grad))

    pixel = PixelGrad.weighted_sum(terms)
    if pixel.direct is None and pixel.composite is None:
        grads = GradientSet.zeros(len(shapes))
    else:
        grads = backward(buffer, pixel, shapes, transforms)

    if force is not None and weights.delta > 0.0:
        f_val, f_grads = force_loss(shapes, transforms, force)
        grads = grads + f_grads.scaled(weights.delta)

    value = (weights.alpha * c_val + weights.beta * o_smooth
             + weights.gamma * u_val + weights.delta * f_val)
    if not math.isfinite(value):
        raise NonFiniteGradient(f"non-finite total loss {value}")
    return TotalLoss(value=float(value), gradients=grads, containment=c_val,
                     overlap_smooth=o_smooth, overlap_count=o_count,
                     uniform=u_val, force=f_val)
