"""Shared geometry builders and independent oracles for the test suite.

Oracles here deliberately avoid the library's vectorized code paths: the
brute-force signed distance walks edges in plain Python, and inclusion
testing for metrics checks goes through matplotlib. Builders produce exactly
closed cubic loops (shared anchor arrays, no rounding).
"""

import math
from dataclasses import replace

import numpy as np

from collage.vecgeom import BezierShape, ElementTransform, validate_simple

# cubic handle length for a quarter-circle arc of radius 1
MAGIC = 0.5522847498307934


def circle_shape(radius=1.0, center=(0.0, 0.0), id="circle"):
    """Standard 4-arc cubic approximation of a circle."""
    cx, cy = float(center[0]), float(center[1])
    r = float(radius)
    c = MAGIC * r
    a0 = (cx + r, cy)
    a1 = (cx, cy + r)
    a2 = (cx - r, cy)
    a3 = (cx, cy - r)
    segs = np.array([
        [a0, (cx + r, cy + c), (cx + c, cy + r), a1],
        [a1, (cx - c, cy + r), (cx - r, cy + c), a2],
        [a2, (cx - r, cy - c), (cx - c, cy - r), a3],
        [a3, (cx + c, cy - r), (cx + r, cy - c), a0],
    ], dtype=np.float64)
    return BezierShape(segs, id=id)


def line_cubic(p0, p3):
    p0 = np.asarray(p0, dtype=np.float64)
    p3 = np.asarray(p3, dtype=np.float64)
    return np.stack([p0, p0 + (p3 - p0) / 3.0, p0 + 2.0 * (p3 - p0) / 3.0, p3])


def polygon_shape(corners, id="poly"):
    """Closed loop of straight edges (each promoted to a degenerate cubic)."""
    pts = [np.asarray(p, dtype=np.float64) for p in corners]
    segs = np.stack([line_cubic(pts[i], pts[(i + 1) % len(pts)])
                     for i in range(len(pts))])
    return BezierShape(segs, id=id)


def square_shape(side=1.0, center=(0.0, 0.0), id="square"):
    h = side / 2.0
    cx, cy = center
    return polygon_shape([(cx - h, cy - h), (cx + h, cy - h),
                          (cx + h, cy + h), (cx - h, cy + h)], id=id)


def rect_shape(w, h, center=(0.0, 0.0), id="rect"):
    cx, cy = center
    return polygon_shape([(cx - w / 2, cy - h / 2), (cx + w / 2, cy - h / 2),
                          (cx + w / 2, cy + h / 2), (cx - w / 2, cy + h / 2)],
                         id=id)


def smooth_loop(anchors, id="loop"):
    """C1 closed cubic through the anchor ring (Catmull-Rom style handles)."""
    a = np.asarray(anchors, dtype=np.float64)
    n = len(a)
    nxt = np.roll(a, -1, axis=0)
    prv = np.roll(a, 1, axis=0)
    tan = (nxt - prv) / 6.0
    h1 = a + tan
    h2 = nxt - np.roll(tan, -1, axis=0)
    segs = np.stack([a, h1, h2, nxt], axis=1)
    return BezierShape(segs, id=id)


def star_blob(seed=0, n=6, r_lo=0.55, r_hi=1.0, id=None):
    """Random smooth star-shaped loop of unit scale; always simple."""
    for attempt in range(20):
        rng = np.random.default_rng(seed + 1000 * attempt)
        theta = 2 * np.pi * (np.arange(n) + rng.uniform(-0.2, 0.2, n)) / n
        rad = rng.uniform(r_lo, r_hi, n)
        anchors = np.stack([rad * np.cos(theta), rad * np.sin(theta)], axis=1)
        shape = smooth_loop(anchors, id=id or f"blob{seed}")
        try:
            validate_simple(shape, tolerance=1e-3)
            return shape
        except Exception:
            continue
    raise RuntimeError("could not build a simple star blob")


def teardrop_shape(id="teardrop"):
    """Teardrop in canvas coordinates: round bottom, narrow apex at the top."""
    segs = np.array([
        [(300.0, 60.0), (340.0, 140.0), (390.0, 220.0), (390.0, 380.0)],
        [(390.0, 380.0), (390.0, 480.0), (345.0, 560.0), (300.0, 560.0)],
        [(300.0, 560.0), (255.0, 560.0), (210.0, 480.0), (210.0, 380.0)],
        [(210.0, 380.0), (210.0, 220.0), (260.0, 140.0), (300.0, 60.0)],
    ], dtype=np.float64)
    return BezierShape(segs, id=id)


def bezier_point(ctrl, t):
    """De Casteljau evaluation, independent of the library's Bernstein path."""
    p = [np.asarray(c, dtype=np.float64) for c in ctrl]
    for _ in range(3):
        p = [(1 - t) * p[i] + t * p[i + 1] for i in range(len(p) - 1)]
    return p[0]


# ---------------------------------------------------------------------------
# brute-force oracles (plain Python, independent of vecgeom internals)
# ---------------------------------------------------------------------------

def _point_segment_distance(px, py, ax, ay, bx, by):
    ex, ey = bx - ax, by - ay
    L2 = ex * ex + ey * ey
    if L2 == 0.0:
        return math.hypot(px - ax, py - ay)
    u = ((px - ax) * ex + (py - ay) * ey) / L2
    u = min(1.0, max(0.0, u))
    return math.hypot(px - (ax + u * ex), py - (ay + u * ey))


def _crossings_inside(px, py, verts):
    inside = False
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        if (ay > py) != (by > py):
            xint = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < xint:
                inside = not inside
    return inside


def brute_sdf(verts, points):
    """Signed distance oracle: per-point edge walk plus even-odd crossing."""
    out = np.empty(len(points))
    v = np.asarray(verts, dtype=np.float64)
    for k, (px, py) in enumerate(points):
        d = min(_point_segment_distance(px, py, v[i, 0], v[i, 1],
                                        v[(i + 1) % len(v), 0],
                                        v[(i + 1) % len(v), 1])
                for i in range(len(v)))
        out[k] = -d if _crossings_inside(px, py, v) else d
    return out


# ---------------------------------------------------------------------------
# finite differences over transform parameters
# ---------------------------------------------------------------------------

PARAM_KEYS = ("tx", "ty", "s", "r")


def shift_transform(xf, key, delta):
    if key == "tx":
        return replace(xf, t=(xf.t[0] + delta, xf.t[1]))
    if key == "ty":
        return replace(xf, t=(xf.t[0], xf.t[1] + delta))
    if key == "s":
        return replace(xf, s=xf.s + delta)
    if key == "r":
        return replace(xf, r=xf.r + delta)
    raise KeyError(key)


def fd_transform(loss_fn, transforms, i, key, h):
    """Central finite difference of loss_fn(list of transforms) in one slot."""
    def at(delta):
        xs = list(transforms)
        xs[i] = shift_transform(xs[i], key, delta)
        return loss_fn(xs)
    return (at(+h) - at(-h)) / (2.0 * h)


def grad_component(grads, i, key):
    if key == "tx":
        return float(grads.translate[i, 0])
    if key == "ty":
        return float(grads.translate[i, 1])
    if key == "s":
        return float(grads.scale[i])
    if key == "r":
        return float(grads.rotate[i])
    raise KeyError(key)


def random_scene(seed, n_max=5, span=(170.0, 430.0), s_range=(18.0, 55.0)):
    """Mixed random scene near the canvas middle; free everything."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    shapes, transforms = [], []
    for i in range(n):
        kind = int(rng.integers(0, 3))
        if kind == 0:
            shape = circle_shape(id=f"e{i}")
        elif kind == 1:
            shape = square_shape(id=f"e{i}")
        else:
            shape = star_blob(seed=seed * 31 + i, id=f"e{i}")
        t = rng.uniform(span[0], span[1], 2)
        s = rng.uniform(*s_range)
        r = rng.uniform(-math.pi, math.pi)
        shapes.append(shape)
        transforms.append(ElementTransform(t=(float(t[0]), float(t[1])),
                                           s=float(s), r=float(r)))
    return shapes, transforms
