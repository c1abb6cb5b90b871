"""Differentiable soft rasterization of transformed outlines.

Every element is converted to a per-pixel coverage field
``alpha_i(p) = sigmoid(-d_i(p) / kappa)`` from the signed distance d_i to its
outline, then reduced into an additive transparency buffer
``T = sum_i tau * alpha_i`` and a multiplicative black-and-white composite
``prod_i (1 - alpha_i)``. ``backward`` pulls per-pixel loss gradients through
the sigmoid and the signed-distance jacobians back to each element's
(translate, scale, rotate).

The logical canvas is a 600x600-unit square; rendering at resolution (w, h)
scales geometry by k = w/600 so the same scene can be rasterized at any level
of a resolution schedule. Gradients are reported in canvas units, which makes
optimizer step sizes resolution independent.

Coverage products are accumulated in log space (log(1 - alpha) via
``log_expit``) so fully covered pixels neither underflow nor divide by zero in
the leave-one-out terms of the backward pass.

Smoothness note: by default each rasterize call re-flattens outlines
adaptively, which is exact but only piecewise-smooth in the scale parameter
(subdivision depth can flip). Passing a ``sampling`` from
``prepare_sampling`` freezes the outline sample parameters so the rendered
losses become smooth functions of the transforms; the optimizer does this per
resolution level, and gradient checks against finite differences must compare
under a fixed sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import NonFiniteGradient, ValidationError
from .vecgeom import (BezierShape, ElementTransform, flatten_segments,
                      polyline_inside, polyline_sdf, transform_points)

CANVAS_UNITS = 600.0


@dataclass(frozen=True)
class RenderConfig:
    """Soft-rasterizer knobs.

    kappa: logistic edge softness in device pixels.
    tau: per-element transparency deposited into the additive buffer.
    padding: per-element bbox margin in pixels (None = ceil(6 kappa); must be
        >= ceil(3 kappa) so the logistic tail is captured).
    flatten_tolerance: outline flattening tolerance in device pixels.
    """

    kappa: float = 1.0
    tau: float = 0.5
    padding: int | None = None
    flatten_tolerance: float = 0.25

    def __post_init__(self):
        if not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if not 0.0 < self.tau < 1.0:
            raise ValidationError(f"tau must be in (0, 1), got {self.tau}")
        if not self.flatten_tolerance > 0.0:
            raise ValidationError("flatten_tolerance must be positive")
        if self.padding is not None and self.padding < math.ceil(3.0 * self.kappa):
            raise ValidationError(
                f"padding {self.padding} below minimum {math.ceil(3.0 * self.kappa)}"
                " (3 kappa)")

    @property
    def effective_padding(self) -> int:
        return self.padding if self.padding is not None else math.ceil(6.0 * self.kappa)


def resolve_resolution(resolution) -> tuple[int, int]:
    if isinstance(resolution, (int, np.integer)):
        res = (int(resolution), int(resolution))
    else:
        res = (int(resolution[0]), int(resolution[1]))
    if res[0] < 8 or res[1] < 8:
        raise ValidationError(f"resolution {res} below minimum 8x8")
    return res


# ---------------------------------------------------------------------------
# fixed outline sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShapeSampling:
    """Frozen outline sample set for one element: vertex v lives on segment
    ``seg[v]`` and equals ``basis[v] @ ctrl[seg[v]]`` for any transformed
    control points, so vertices are exactly linear in the control points."""

    seg: np.ndarray
    basis: np.ndarray

    def vertices(self, ctrl: np.ndarray) -> np.ndarray:
        return np.einsum("vj,vjd->vd", self.basis, ctrl[self.seg])


def prepare_sampling(shapes: list[BezierShape], transforms: list[ElementTransform],
                     config: RenderConfig, resolution) -> list[ShapeSampling]:
    """Flatten each element's local outline at the tolerance implied by its
    current scale at this resolution, divided by a 4x margin so moderate scale
    growth within a level stays inside tolerance. Identical shapes at similar
    scales share one sampling."""
    w, _ = resolve_resolution(resolution)
    k = w / CANVAS_UNITS
    cache: dict[tuple[int, float], ShapeSampling] = {}
    out = []
    for shape, xf in zip(shapes, transforms):
        tol_local = config.flatten_tolerance / max(xf.s * k, 1e-9) / 4.0
        # quantize to a power of two (rounding down) so equal shapes bucket
        tol_q = 2.0 ** math.floor(math.log2(tol_local))
        key = (id(shape.segments), tol_q)
        samp = cache.get(key)
        if samp is None:
            _, params = flatten_segments(shape.segments, tol_q, with_params=True)
            samp = ShapeSampling(seg=params.seg, basis=params.basis)
            cache[key] = samp
        out.append(samp)
    return out


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ElementCoverage:
    """One element's rasterization inside its padded, canvas-clipped bbox."""

    x0: int
    y0: int
    alpha: np.ndarray          # (h, w) coverage in [0, 1]
    log_one_minus: np.ndarray  # log(1 - alpha), finite
    dist: np.ndarray           # signed distance in px (negative inside)
    qx: np.ndarray             # witness point on outline, px
    qy: np.ndarray

    @property
    def box(self) -> tuple[slice, slice]:
        h, w = self.alpha.shape
        return slice(self.y0, self.y0 + h), slice(self.x0, self.x0 + w)


@dataclass(eq=False)
class CoverageBuffer:
    """Forward rasterization result at one resolution."""

    width: int
    height: int
    scale: float                        # device px per canvas unit
    config: RenderConfig
    elements: list[ElementCoverage]
    accumulated_transparency: np.ndarray  # T = sum tau * alpha_i
    log_transmittance: np.ndarray         # S = sum log(1 - alpha_i)
    composite_bw: np.ndarray              # exp(S): 1 empty, 0 covered

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)


def _pixel_grid(x0, x1, y0, y1):
    px = x0 + 0.5 + np.arange(x1 - x0, dtype=np.float64)
    py = y0 + 0.5 + np.arange(y1 - y0, dtype=np.float64)
    return np.tile(px, y1 - y0), np.repeat(py, x1 - x0)


def _element_vertices(shape, xf, k, samp, tol):
    ctrl = transform_points(shape.segments, xf) * k
    if samp is not None:
        return samp.vertices(ctrl)
    return flatten_segments(ctrl, tol).vertices


def _clipped_bbox(verts, pad, width, height):
    x0 = max(int(math.floor(verts[:, 0].min() - pad)), 0)
    y0 = max(int(math.floor(verts[:, 1].min() - pad)), 0)
    x1 = min(int(math.ceil(verts[:, 0].max() + pad)), width)
    y1 = min(int(math.ceil(verts[:, 1].max() + pad)), height)
    if x1 <= x0 or y1 <= y0:
        return x0, x0, y0, y0
    return x0, x1, y0, y1


def rasterize(shapes: list[BezierShape], transforms: list[ElementTransform],
              config: RenderConfig, resolution,
              sampling: list[ShapeSampling] | None = None) -> CoverageBuffer:
    """Soft-rasterize all elements and reduce the scene buffers.

    Elements are accumulated in index order so results are bit-reproducible.
    Each element only touches its padded bounding box; alpha is treated as
    zero outside it (the logistic tail there is below ~2.5e-3 at the default
    padding of 6 kappa).
    """
    if len(shapes) != len(transforms):
        raise ValidationError("shapes and transforms length mismatch")
    w, h = resolve_resolution(resolution)
    k = w / CANVAS_UNITS
    kappa = config.kappa
    pad = config.effective_padding

    T = np.zeros((h, w))
    S = np.zeros((h, w))
    elements = []
    for i, (shape, xf) in enumerate(zip(shapes, transforms)):
        samp = sampling[i] if sampling is not None else None
        verts = _element_vertices(shape, xf, k, samp, config.flatten_tolerance)
        x0, x1, y0, y1 = _clipped_bbox(verts, pad, w, h)
        if x1 == x0 or y1 == y0:
            empty = np.zeros((0, 0))
            elements.append(ElementCoverage(x0=0, y0=0, alpha=empty,
                                            log_one_minus=empty, dist=empty,
                                            qx=empty, qy=empty))
            continue
        px, py = _pixel_grid(x0, x1, y0, y1)
        d, qx, qy, _, _ = polyline_sdf(verts, px, py)
        shp = (y1 - y0, x1 - x0)
        z = d / kappa
        alpha = expit(-z).reshape(shp)
        lom = log_expit(z).reshape(shp)
        cov = ElementCoverage(x0=x0, y0=y0, alpha=alpha, log_one_minus=lom,
                              dist=d.reshape(shp), qx=qx.reshape(shp),
                              qy=qy.reshape(shp))
        elements.append(cov)
        ys, xs = cov.box
        T[ys, xs] += config.tau * alpha
        S[ys, xs] += lom
    return CoverageBuffer(width=w, height=h, scale=k, config=config,
                          elements=elements, accumulated_transparency=T,
                          log_transmittance=S, composite_bw=np.exp(S))


# ---------------------------------------------------------------------------
# hard masks
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class HardMasks:
    """Binary per-element coverage (pixel center strictly inside outline)."""

    width: int
    height: int
    masks: list[tuple[int, int, np.ndarray]]  # (x0, y0, bool (h, w))
    counts: np.ndarray                        # dense int map of cover depth

    def object_mask(self) -> np.ndarray:
        return self.counts >= 1

    def overlap_mask(self) -> np.ndarray:
        return self.counts >= 2


def rasterize_hard(shapes, transforms, resolution, flatten_tolerance=0.25,
                   sampling=None) -> HardMasks:
    """Even-odd binary rasterization (no softness, no padding)."""
    w, h = resolve_resolution(resolution)
    k = w / CANVAS_UNITS
    counts = np.zeros((h, w), dtype=np.int32)
    masks = []
    for i, (shape, xf) in enumerate(zip(shapes, transforms)):
        samp = sampling[i] if sampling is not None else None
        if samp is not None:
            verts = samp.vertices(transform_points(shape.segments, xf) * k)
        else:
            verts = flatten_segments(transform_points(shape.segments, xf) * k,
                                     flatten_tolerance).vertices
        x0, x1, y0, y1 = _clipped_bbox(verts, 1.0, w, h)
        if x1 == x0 or y1 == y0:
            masks.append((0, 0, np.zeros((0, 0), dtype=bool)))
            continue
        px, py = _pixel_grid(x0, x1, y0, y1)
        inside = polyline_inside(verts, px, py).reshape(y1 - y0, x1 - x0)
        masks.append((x0, y0, inside))
        counts[y0:y1, x0:x1] += inside
    return HardMasks(width=w, height=h, masks=masks, counts=counts)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PixelGrad:
    """Per-pixel loss gradients addressed to element coverage.

    The losses in this engine touch alpha_i two ways: a channel shared by all
    elements (``direct`` = dL/d(alpha_i), identical expression for every i, as
    in the additive transparency buffer) and a channel through the multiplica-
    tive composite (``composite`` = dL/d(composite_bw); the leave-one-out
    factor d(composite)/d(alpha_i) = -prod_{j!=i}(1-alpha_j) is applied inside
    backward). ``dense_channel`` materializes the combined per-element grid.
    """

    direct: np.ndarray | None = None
    composite: np.ndarray | None = None

    @staticmethod
    def weighted_sum(terms: list[tuple[float, "PixelGrad"]]) -> "PixelGrad":
        direct = None
        composite = None
        for wgt, pg in terms:
            if pg is None or wgt == 0.0:
                continue
            if pg.direct is not None:
                direct = wgt * pg.direct if direct is None else direct + wgt * pg.direct
            if pg.composite is not None:
                composite = (wgt * pg.composite if composite is None
                             else composite + wgt * pg.composite)
        return PixelGrad(direct=direct, composite=composite)

    def dense_channel(self, buffer: CoverageBuffer, i: int) -> np.ndarray:
        """Full-grid dL/d(alpha_i) for element i (zero outside its bbox)."""
        out = np.zeros((buffer.height, buffer.width))
        cov = buffer.elements[i]
        if cov.alpha.size == 0:
            return out
        ys, xs = cov.box
        g = np.zeros_like(cov.alpha)
        if self.direct is not None:
            g = g + self.direct[ys, xs]
        if self.composite is not None:
            loo = np.exp(buffer.log_transmittance[ys, xs] - cov.log_one_minus)
            g = g - self.composite[ys, xs] * loo
        out[ys, xs] = g
        return out


@dataclass(eq=False)
class GradientSet:
    """Loss gradients per element in canvas units."""

    translate: np.ndarray  # (n, 2)
    scale: np.ndarray      # (n,)
    rotate: np.ndarray     # (n,)

    @staticmethod
    def zeros(n: int) -> "GradientSet":
        return GradientSet(np.zeros((n, 2)), np.zeros(n), np.zeros(n))

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(self.translate + other.translate,
                           self.scale + other.scale,
                           self.rotate + other.rotate)

    def scaled(self, f: float) -> "GradientSet":
        return GradientSet(f * self.translate, f * self.scale, f * self.rotate)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.translate).all()
                    and np.isfinite(self.scale).all()
                    and np.isfinite(self.rotate).all())


def backward(buffer: CoverageBuffer, pixel_grad: PixelGrad,
             shapes: list[BezierShape],
             transforms: list[ElementTransform]) -> GradientSet:
    """Pull per-pixel gradients back to each element's transform parameters.

    Chain: dL/dtheta = sum_p dL/dalpha_i(p) * sigma'(z) * (-1/kappa) *
    dd/dtheta(p), with the signed-distance jacobians evaluated at the stored
    witness points. Results are converted from device px to canvas units.
    Raises NonFiniteGradient if anything non-finite appears.
    """
    n = len(buffer.elements)
    out = GradientSet.zeros(n)
    kappa = buffer.config.kappa
    k = buffer.scale
    for i, cov in enumerate(buffer.elements):
        if cov.alpha.size == 0:
            continue
        ys, xs = cov.box
        g = None
        if pixel_grad.direct is not None:
            g = pixel_grad.direct[ys, xs]
        if pixel_grad.composite is not None:
            loo = np.exp(buffer.log_transmittance[ys, xs] - cov.log_one_minus)
            term = -pixel_grad.composite[ys, xs] * loo
            g = term if g is None else g + term
        if g is None:
            continue
        sprime = cov.alpha * np.exp(cov.log_one_minus)  # sigma'(z)
        gphi = g * sprime * (-1.0 / kappa)              # dL/dd in px
        if not np.count_nonzero(gphi):
            continue

        h, wid = cov.alpha.shape
        px = (cov.x0 + 0.5 + np.arange(wid))[None, :]
        py = (cov.y0 + 0.5 + np.arange(h))[:, None]
        d = cov.dist
        safe = np.where(d == 0.0, 1.0, d)
        wx = np.where(d == 0.0, 0.0, (px - cov.qx) / safe)
        wy = np.where(d == 0.0, 0.0, (py - cov.qy) / safe)

        xf = transforms[i]
        tx, ty = xf.t[0] * k, xf.t[1] * k
        gtx = -np.sum(gphi * wx)
        gty = -np.sum(gphi * wy)
        gs = -np.sum(gphi * (wx * (cov.qx - tx) + wy * (cov.qy - ty))) / xf.s
        gr = np.sum(gphi * (wx * (cov.qy - ty) - wy * (cov.qx - tx)))
        out.translate[i, 0] = gtx * k
        out.translate[i, 1] = gty * k
        out.scale[i] = gs
        out.rotate[i] = gr
    if not out.is_finite():
        raise NonFiniteGradient("non-finite transform gradient in backward()")
    return out


# ---------------------------------------------------------------------------
# presentation composites
# ---------------------------------------------------------------------------

def parse_hex_color(s: str | None) -> np.ndarray:
    if not s:
        return np.array([0.4, 0.4, 0.4])
    m = s.strip()
    if m.startswith("#") and len(m) == 7:
        return np.array([int(m[1:3], 16), int(m[3:5], 16), int(m[5:7], 16)]) / 255.0
    if m.startswith("#") and len(m) == 4:
        return np.array([int(c * 2, 16) for c in m[1:]]) / 255.0
    raise ValidationError(f"expected #rgb or #rrggbb color, got {s!r}")


def composite_color(buffer: CoverageBuffer, fills: list[str | None]) -> np.ndarray:
    """Paint elements over white in index order using soft coverage."""
    img = np.ones((buffer.height, buffer.width, 3))
    for cov, fill in zip(buffer.elements, fills):
        if cov.alpha.size == 0:
            continue
        ys, xs = cov.box
        rgb = parse_hex_color(fill)
        a = cov.alpha[..., None]
        img[ys, xs] = img[ys, xs] * (1.0 - a) + rgb * a
    return img
