"""Closed cubic Bezier outlines, rigid+scale transforms, flattening, and
signed distances.

Coordinate conventions: y grows downward (screen/SVG convention), angles in
radians rotate clockwise on screen (counter-clockwise in math terms applied to
y-down data; the matrix is the standard [[cos,-sin],[sin,cos]]). All routines
are unit-agnostic; callers decide whether coordinates are canvas units or
device pixels.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateShape, ParseError, ValidationError

# Witness-point distance pass allocates (pixels x edges) scratch arrays; cap
# the product so a single call never balloons past a few hundred MB.
_SDF_BLOCK = 4_000_000
_TINY = 1e-30


# ---------------------------------------------------------------------------
# shapes and transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BezierShape:
    """A closed loop of cubic Bezier segments.

    ``segments`` has shape (N, 4, 2): segment k runs from anchor
    ``segments[k, 0]`` through control points 1 and 2 to anchor
    ``segments[k, 3]``, which must equal ``segments[k+1, 0]`` exactly; the
    last anchor closes onto the first. N >= 3.

    ``intrinsic_size`` (sqrt of outline area), ``local_centroid`` and
    ``bounding_radius`` are cached at construction from a coarse flattening;
    they drive initialization heuristics, not exact geometry.
    """

    segments: np.ndarray
    id: str = ""
    intrinsic_size: float = field(init=False)
    local_centroid: np.ndarray = field(init=False)
    bounding_radius: float = field(init=False)

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=np.float64)
        if seg.ndim != 3 or seg.shape[1:] != (4, 2):
            raise DegenerateShape(f"segments must be (N,4,2), got {seg.shape}")
        n = seg.shape[0]
        if n < 3:
            raise DegenerateShape(f"closed outline needs >= 3 segments, got {n}")
        if not np.isfinite(seg).all():
            raise DegenerateShape("non-finite control point")
        nxt = np.roll(seg[:, 0], -1, axis=0)
        if not np.array_equal(seg[:, 3], nxt):
            raise DegenerateShape("segment chain is not closed (anchors must match exactly)")
        seg = seg.copy()
        seg.flags.writeable = False
        object.__setattr__(self, "segments", seg)

        lo = seg.reshape(-1, 2).min(axis=0)
        hi = seg.reshape(-1, 2).max(axis=0)
        tol = max(float(np.hypot(*(hi - lo))) / 512.0, 1e-12)
        poly = flatten(self, tol)
        area = poly.area()
        if abs(area) < tol * tol:
            raise DegenerateShape(f"outline area {area:g} is degenerate at tolerance {tol:g}")
        object.__setattr__(self, "intrinsic_size", math.sqrt(abs(area)))
        c = poly.centroid()
        object.__setattr__(self, "local_centroid", c)
        object.__setattr__(self, "bounding_radius",
                           float(np.max(np.hypot(*(poly.vertices - c).T))))

    @property
    def n_segments(self) -> int:
        return int(self.segments.shape[0])

    def with_id(self, new_id: str) -> "BezierShape":
        return replace(self, id=new_id)

    def recentered(self) -> tuple["BezierShape", np.ndarray]:
        """Translate control points so the area centroid sits at the origin.

        Returns the recentered shape and the original centroid, so callers can
        reconstruct the original placement as ElementTransform(t=centroid).
        """
        c = self.local_centroid
        return BezierShape(self.segments - c, id=self.id), c.copy()


@dataclass(frozen=True)
class ElementTransform:
    """Per-element similarity transform: P' = R(r) @ (P * s) + t.

    Scale is a single scalar applied before rotation; t is in the same units
    as the target coordinate system. Modes mark parameter groups the optimizer
    must not move ("fixed") or must clamp ("range" rotation).
    """

    t: tuple[float, float] = (0.0, 0.0)
    s: float = 1.0
    r: float = 0.0
    scale_mode: str = "free"
    rotation_mode: str = "free"
    rotation_range: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", (float(self.t[0]), float(self.t[1])))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "r", float(self.r))
        if not (self.s > 0.0) or not math.isfinite(self.s):
            raise ValidationError(f"scale must be positive and finite, got {self.s}")
        if self.scale_mode not in ("free", "fixed"):
            raise ValidationError(f"unknown scale_mode {self.scale_mode!r}")
        if self.rotation_mode not in ("free", "fixed", "range"):
            raise ValidationError(f"unknown rotation_mode {self.rotation_mode!r}")
        if self.rotation_mode == "range":
            if self.rotation_range is None:
                raise ValidationError("rotation_mode='range' needs rotation_range")
            lo, hi = (float(self.rotation_range[0]), float(self.rotation_range[1]))
            if not lo <= hi:
                raise ValidationError(f"rotation_range lo {lo} > hi {hi}")
            if not lo <= self.r <= hi:
                raise ValidationError(f"rotation {self.r} outside range [{lo}, {hi}]")
            object.__setattr__(self, "rotation_range", (lo, hi))
        elif self.rotation_range is not None:
            raise ValidationError("rotation_range only valid with rotation_mode='range'")


def rotation_matrix(r: float) -> np.ndarray:
    c, s = math.cos(r), math.sin(r)
    return np.array([[c, -s], [s, c]])


def transform_points(points: np.ndarray, xf: ElementTransform) -> np.ndarray:
    """Apply P' = R(r) @ (P * s) + t to an (..., 2) array of row points."""
    pts = np.asarray(points, dtype=np.float64)
    return (pts * xf.s) @ rotation_matrix(xf.r).T + np.asarray(xf.t)


def apply_transform(shape: BezierShape, xf: ElementTransform) -> BezierShape:
    """Transform a shape's control points; cubic curves are closed under
    similarity transforms so the result is the exact transformed outline."""
    return BezierShape(transform_points(shape.segments, xf), id=shape.id)


# ---------------------------------------------------------------------------
# flattening
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Polyline:
    """Closed or open vertex chain; consecutive duplicates already removed."""

    vertices: np.ndarray
    closed: bool = True

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise DegenerateShape(f"vertices must be (M,2), got {v.shape}")
        if self.closed and v.shape[0] < 3:
            raise DegenerateShape(f"closed polyline needs >= 3 vertices, got {v.shape[0]}")
        object.__setattr__(self, "vertices", v)

    def area(self) -> float:
        """Signed shoelace area (positive = counter-clockwise in math axes,
        which reads clockwise on a y-down screen)."""
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]))

    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = 0.5 * np.sum(cross)
        if abs(a) < _TINY:
            return v.mean(axis=0)
        return ((v + w) * cross[:, None]).sum(axis=0) / (6.0 * a)


@dataclass(frozen=True, eq=False)
class FlattenParams:
    """Where each polyline vertex came from: segment index, curve parameter,
    and the cubic Bernstein basis weights at that parameter (so vertex ==
    basis @ control_points[seg])."""

    seg: np.ndarray    # (V,) int
    t: np.ndarray      # (V,) float in [0, 1]
    basis: np.ndarray  # (V, 4)


def _bernstein3(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    u = 1.0 - t
    return np.stack([u * u * u, 3 * u * u * t, 3 * u * t * t, t * t * t], axis=-1)


def _flat_enough(ctrl: np.ndarray, tol: float) -> bool:
    # Exact bound: max_t |B(t) - chord(t)| = max_t t(1-t)|(1-t)u + t v| <=
    # max(|u|, |v|)/4 with u = 3P1-2P0-P3, v = 3P2-P0-2P3.
    p0, p1, p2, p3 = ctrl
    u = 3.0 * p1 - 2.0 * p0 - p3
    v = 3.0 * p2 - p0 - 2.0 * p3
    m = max(u[0] * u[0] + u[1] * u[1], v[0] * v[0] + v[1] * v[1])
    return 0.0625 * m <= tol * tol


def _split_half(ctrl):
    p0, p1, p2, p3 = ctrl
    q0 = 0.5 * (p0 + p1)
    q1 = 0.5 * (p1 + p2)
    q2 = 0.5 * (p2 + p3)
    r0 = 0.5 * (q0 + q1)
    r1 = 0.5 * (q1 + q2)
    m = 0.5 * (r0 + r1)
    return (p0, q0, r0, m), (m, r1, q2, p3)


def _subdivide(ctrl, t0, t1, tol, out_t, depth=24):
    """Append parameter values covering (t0, t1]; the point at t0 is assumed
    already emitted by the caller."""
    if depth == 0 or _flat_enough(ctrl, tol):
        out_t.append(t1)
        return
    left, right = _split_half(ctrl)
    tm = 0.5 * (t0 + t1)
    _subdivide(left, t0, tm, tol, out_t, depth - 1)
    _subdivide(right, tm, t1, tol, out_t, depth - 1)


def flatten(shape: BezierShape, tolerance: float, with_params: bool = False):
    """Adaptively flatten a closed Bezier loop into a closed Polyline.

    The polyline's maximum deviation from the true curve is <= ``tolerance``
    (guaranteed by the chord-deviation bound, not sampled). Vertices follow
    outline order; the duplicate closing vertex is dropped. With
    ``with_params`` also returns the (segment, t) source of every vertex.
    """
    return flatten_segments(shape.segments, tolerance, with_params)


def flatten_segments(segs: np.ndarray, tolerance: float, with_params: bool = False):
    """`flatten` for a raw (N,4,2) closed segment array (no shape validation)."""
    if not tolerance > 0.0:
        raise ValidationError(f"flatten tolerance must be > 0, got {tolerance}")
    seg_ids: list[int] = [0]
    ts: list[float] = [0.0]
    for k in range(segs.shape[0]):
        out_t: list[float] = []
        _subdivide(tuple(segs[k]), 0.0, 1.0, tolerance, out_t)
        seg_ids.extend([k] * len(out_t))
        ts.extend(out_t)
    # last emitted point is segment N-1 at t=1 == the first anchor
    seg_arr = np.array(seg_ids[:-1], dtype=np.intp)
    t_arr = np.array(ts[:-1], dtype=np.float64)
    basis = _bernstein3(t_arr)
    verts = np.einsum("vj,vjd->vd", basis, segs[seg_arr])

    keep = np.ones(len(verts), dtype=bool)
    if len(verts) > 1:
        same = np.all(verts[1:] == verts[:-1], axis=1)
        keep[1:] = ~same
        if np.all(verts[-1] == verts[0]):
            keep[-1] = False
    verts, seg_arr, t_arr, basis = verts[keep], seg_arr[keep], t_arr[keep], basis[keep]

    poly = Polyline(verts, closed=True)
    if with_params:
        return poly, FlattenParams(seg=seg_arr, t=t_arr, basis=basis)
    return poly


# ---------------------------------------------------------------------------
# distances and inclusion
# ---------------------------------------------------------------------------

def _edges(verts: np.ndarray):
    a = verts
    b = np.roll(verts, -1, axis=0)
    return a, b


def polyline_inside(verts: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Even-odd inclusion test for flat query arrays px, py against a closed
    polyline. Points exactly on an edge land on either side; callers keep
    query points off the outline (pixel centers vs. float geometry)."""
    a, b = _edges(verts)
    ax, ay = a[:, 0], a[:, 1]
    ex, ey = b[:, 0] - ax, b[:, 1] - ay
    ey_safe = np.where(ey == 0.0, 1.0, ey)
    n = px.shape[0]
    out = np.empty(n, dtype=bool)
    step = max(1, _SDF_BLOCK // max(1, verts.shape[0]))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        pyc = py[lo:hi, None]
        crosses = (ay[None, :] > pyc) != ((ay + ey)[None, :] > pyc)
        xint = ax[None, :] + (pyc - ay[None, :]) * (ex / ey_safe)[None, :]
        hits = crosses & (px[lo:hi, None] < xint)
        out[lo:hi] = (hits.sum(axis=1) & 1).astype(bool)
    return out


def polyline_sdf(verts: np.ndarray, px: np.ndarray, py: np.ndarray,
                 want_witness: bool = True):
    """Signed distance from flat query arrays to a closed polyline.

    Returns (d, qx, qy, seg, u): signed distance (negative inside by the
    even-odd rule), the witness point q on the outline, the edge index it lies
    on, and the parameter u in [0,1] along that edge. With
    ``want_witness=False`` the last four are None.
    """
    a, b = _edges(verts)
    ax, ay = a[:, 0], a[:, 1]
    ex, ey = b[:, 0] - ax, b[:, 1] - ay
    ee = np.maximum(ex * ex + ey * ey, _TINY)
    ey_safe = np.where(ey == 0.0, 1.0, ey)

    n = px.shape[0]
    d = np.empty(n, dtype=np.float64)
    if want_witness:
        qx = np.empty(n)
        qy = np.empty(n)
        seg = np.empty(n, dtype=np.intp)
        uu = np.empty(n)
    else:
        qx = qy = seg = uu = None

    step = max(1, _SDF_BLOCK // max(1, verts.shape[0]))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        dx = px[lo:hi, None] - ax[None, :]
        dy = py[lo:hi, None] - ay[None, :]
        u = np.clip((dx * ex[None, :] + dy * ey[None, :]) / ee[None, :], 0.0, 1.0)
        rx = dx - u * ex[None, :]
        ry = dy - u * ey[None, :]
        r2 = rx * rx + ry * ry
        j = np.argmin(r2, axis=1)
        rows = np.arange(hi - lo)
        dist = np.sqrt(r2[rows, j])

        pyc = py[lo:hi, None]
        crosses = (ay[None, :] > pyc) != ((ay + ey)[None, :] > pyc)
        xint = ax[None, :] + (pyc - ay[None, :]) * (ex / ey_safe)[None, :]
        hits = crosses & (px[lo:hi, None] < xint)
        inside = (hits.sum(axis=1) & 1).astype(bool)

        d[lo:hi] = np.where(inside, -dist, dist)
        if want_witness:
            ub = u[rows, j]
            qx[lo:hi] = ax[j] + ub * ex[j]
            qy[lo:hi] = ay[j] + ub * ey[j]
            seg[lo:hi] = j
            uu[lo:hi] = ub
    return d, qx, qy, seg, uu


def signed_distance(poly: Polyline, points: np.ndarray) -> np.ndarray:
    """Signed distance (negative inside) from points (...,2) to the outline."""
    pts = np.asarray(points, dtype=np.float64)
    flat = np.atleast_2d(pts)
    d, *_ = polyline_sdf(poly.vertices, flat[:, 0].copy(), flat[:, 1].copy(),
                         want_witness=False)
    return d.reshape(pts.shape[:-1]) if pts.ndim > 1 else d[0]


def signed_distance_jacobian(shape: BezierShape, xf: ElementTransform,
                             points: np.ndarray, tolerance: float = 1e-3):
    """Partials of the signed distance at ``points`` w.r.t. the transform.

    Returns (d, ddt, dds, ddr) where ddt is (...,2). Uses the witness point q
    on the transformed outline: with w = (p - q) / d (well defined on both
    sides since d is signed),

        dd/dt = -w
        dd/ds = -w . (q - t) / s
        dd/dr = w_x (q_y - t_y) - w_y (q_x - t_x)

    At d == 0 the direction is undefined; those entries return zero
    (a subgradient choice on a measure-zero set).
    """
    poly = flatten(apply_transform(shape, xf), tolerance)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d, qx, qy, _, _ = polyline_sdf(poly.vertices, pts[:, 0].copy(), pts[:, 1].copy())
    tx, ty = xf.t
    safe = np.where(d == 0.0, 1.0, d)
    wx = np.where(d == 0.0, 0.0, (pts[:, 0] - qx) / safe)
    wy = np.where(d == 0.0, 0.0, (pts[:, 1] - qy) / safe)
    ddt = np.stack([-wx, -wy], axis=-1)
    dds = -(wx * (qx - tx) + wy * (qy - ty)) / xf.s
    ddr = wx * (qy - ty) - wy * (qx - tx)
    squeeze = np.asarray(points).ndim == 1
    if squeeze:
        return d[0], ddt[0], float(dds[0]), float(ddr[0])
    return d, ddt, dds, ddr


def polyline_is_simple(verts: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed chain intersect."""
    m = verts.shape[0]
    if m < 3:
        return False
    a, b = _edges(verts)

    def orient(p, q, r):
        return ((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    idx = np.arange(m)
    i = np.repeat(idx, m)
    j = np.tile(idx, m)
    gap = (j - i) % m
    mask = (gap >= 2) & ((i - j) % m >= 2) & (i < j)
    i, j = i[mask], j[mask]
    if i.size == 0:
        return True
    p1, p2 = a[i], b[i]
    p3, p4 = a[j], b[j]
    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) \
        & (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)
    if proper.any():
        return False

    def on_seg(p, q, r):
        # r collinear with p-q: is it within the bbox?
        return ((np.minimum(p[..., 0], q[..., 0]) <= r[..., 0])
                & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
                & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1])
                & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1])))

    touch = ((d1 == 0) & on_seg(p3, p4, p1)) | ((d2 == 0) & on_seg(p3, p4, p2)) \
        | ((d3 == 0) & on_seg(p1, p2, p3)) | ((d4 == 0) & on_seg(p1, p2, p4))
    return not touch.any()


def validate_simple(shape: BezierShape, tolerance: float | None = None) -> None:
    """Raise DegenerateShape when the flattened outline self-intersects."""
    if tolerance is None:
        lo = shape.segments.reshape(-1, 2).min(axis=0)
        hi = shape.segments.reshape(-1, 2).max(axis=0)
        tolerance = max(float(np.hypot(*(hi - lo))) / 512.0, 1e-12)
    poly = flatten(shape, tolerance)
    if not polyline_is_simple(poly.vertices):
        raise DegenerateShape(
            f"outline {shape.id or '<unnamed>'} self-intersects at tolerance {tolerance:g}")
