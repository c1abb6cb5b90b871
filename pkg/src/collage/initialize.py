"""Layout initialization: medial-axis skeleton extraction and greedy
width-sorted placement, with seeded random placement as fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from scipy import ndimage

from .errors import EmptyContainer, PlacementOverflow, ValidationError
from .losses import ContainerField
from .vecgeom import BezierShape, ElementTransform


def _zhang_suen(mask: np.ndarray) -> np.ndarray:
    """Two-subiteration thinning; preserves connectivity and endpoints."""
    img = mask.astype(np.uint8)
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            p = np.pad(img, 1)
            p2 = p[:-2, 1:-1]; p3 = p[:-2, 2:]; p4 = p[1:-1, 2:]; p5 = p[2:, 2:]
            p6 = p[2:, 1:-1]; p7 = p[2:, :-2]; p8 = p[1:-1, :-2]; p9 = p[:-2, :-2]
            ring = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
            b = (p2.astype(np.int32) + p3 + p4 + p5 + p6 + p7 + p8 + p9)
            a = np.zeros_like(b)
            for k in range(8):
                a += (ring[k] == 0) & (ring[k + 1] == 1)
            if step == 0:
                c1, c2 = p2 * p4 * p6, p4 * p6 * p8
            else:
                c1, c2 = p2 * p4 * p8, p2 * p6 * p8
            cond = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & (c1 == 0) & (c2 == 0)
            if cond.any():
                # Parallel deletion can wipe a small remnant (every pixel of
                # a 2x2 block passes the tests at once). Keep one pixel so
                # each component survives to a (near) single-point skeleton.
                labels, n = ndimage.label(img, structure=np.ones((3, 3)))
                total = np.bincount(labels.ravel(), minlength=n + 1)
                dying = np.bincount(labels[cond].ravel(), minlength=n + 1)
                for comp in np.nonzero((dying == total) & (dying > 0))[0]:
                    rows, cols = np.nonzero(cond & (labels == comp))
                    keep = np.argmax(b[rows, cols])
                    cond[rows[keep], cols[keep]] = False
                if cond.any():
                    img[cond] = 0
                    changed = True
    return img.astype(bool)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Medial-axis samples in canvas units.

    widths hold the local inscribed radius (depth of the container at the
    sample); adjacency links samples that were 8-neighbors on the thinned
    pixel grid.
    """

    points: np.ndarray                    # (M, 2)
    widths: np.ndarray                    # (M,)
    adjacency: list[tuple[int, int]]

    def __len__(self) -> int:
        return int(self.points.shape[0])


def extract_skeleton(field: ContainerField, max_points: int | None = None) -> Skeleton:
    """Thin the container interior to its medial axis and attach widths.

    With ``max_points`` the samples are subsampled evenly along the
    width-descending order, so the widest spots always survive.
    """
    interior = field.interior
    if not interior.any():
        raise EmptyContainer("cannot skeletonize an empty container")
    skel = _zhang_suen(interior)
    ys, xs = np.nonzero(skel)
    if ys.size == 0:  # thinning never erases a component entirely, but guard
        raise EmptyContainer("skeletonization left no pixels")
    k = field.scale
    depth_px = -field.signed_distance[ys, xs]
    points = np.stack([(xs + 0.5) / k, (ys + 0.5) / k], axis=1)
    widths = depth_px / k

    if max_points is not None and points.shape[0] > max_points:
        by_width = np.argsort(-widths, kind="stable")
        ranks = np.round(np.linspace(0, points.shape[0] - 1, max_points)).astype(int)
        keep = np.sort(by_width[ranks])
        points, widths = points[keep], widths[keep]
        ys, xs = ys[keep], xs[keep]

    index_of = {(int(y), int(x)): i for i, (y, x) in enumerate(zip(ys, xs))}
    adjacency = []
    for i, (y, x) in enumerate(zip(ys, xs)):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                j = index_of.get((int(y) + dy, int(x) + dx))
                if j is not None and j > i:
                    adjacency.append((i, j))
    return Skeleton(points=points, widths=widths, adjacency=adjacency)


def _interior_at(field: ContainerField, pt: np.ndarray) -> bool:
    ix = int(pt[0] * field.scale)
    iy = int(pt[1] * field.scale)
    return (0 <= ix < field.width and 0 <= iy < field.height
            and bool(field.interior[iy, ix]))


def _random_interior(rng: np.random.Generator, field: ContainerField) -> np.ndarray:
    span_x = field.width / field.scale
    span_y = field.height / field.scale
    for _ in range(100_000):
        pt = np.array([rng.uniform(0.0, span_x), rng.uniform(0.0, span_y)])
        if _interior_at(field, pt):
            return pt
    raise PlacementOverflow("rejection sampling found no interior point")


def _area_budget(s: np.ndarray, free: np.ndarray, shapes: list[BezierShape],
                 field: ContainerField | None, fill: float) -> np.ndarray:
    """Shrink free scales uniformly so total placed area fits the budget
    fill * container_area, preserving width proportionality. Never grows."""
    if field is None or not free.any():
        return s
    sizes = np.array([sh.intrinsic_size for sh in shapes])
    areas = (sizes * s) ** 2
    container_area = field.interior_count / (field.scale ** 2)
    budget = fill * container_area - areas[~free].sum()
    free_area = areas[free].sum()
    if budget <= 0.0 or free_area <= 0.0:
        factor = math.sqrt(max(budget, 1e-6 * container_area) / max(free_area, 1e-12))
    else:
        factor = math.sqrt(budget / free_area)
    if factor < 1.0:
        s = s.copy()
        s[free] *= factor
    return s


def place_elements(skeleton: Skeleton, shapes: list[BezierShape],
                   rng_seed: int = 0,
                   templates: list[ElementTransform] | None = None,
                   field: ContainerField | None = None,
                   fill: float = 0.5) -> list[ElementTransform]:
    """Greedy size-to-width assignment of shapes onto skeleton samples.

    Shapes are visited largest-first; each takes the widest unassigned sample
    that keeps distance >= 0.8 * (sum of placed radii) from everything already
    placed, relaxing the factor by 0.8 per failed pass. A later shape never
    takes a sample wider than any earlier assignment (size-width
    monotonicity). Free scales are set to local_width / bounding_radius, then
    jointly shrunk to an area budget. Shapes that find no sample fall back to
    seeded random interior placement (requires ``field``); PlacementOverflow
    is raised only when that fallback is unavailable.
    """
    n = len(shapes)
    if templates is None:
        templates = [ElementTransform() for _ in range(n)]
    if len(templates) != n:
        raise ValidationError("templates/shapes length mismatch")
    if len(skeleton) == 0:
        raise PlacementOverflow("skeleton has no samples")

    rng = np.random.default_rng(rng_seed)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2))
    order = sorted(range(n), key=lambda i: -shapes[i].intrinsic_size)
    pt_order = np.argsort(-skeleton.widths, kind="stable")

    pos = np.zeros((n, 2))
    s_out = np.array([t.s for t in templates])
    free = np.array([t.scale_mode == "free" for t in templates])
    taken = np.zeros(len(skeleton), dtype=bool)
    placed: list[tuple[np.ndarray, float]] = []  # (position, placed radius)
    width_cap = math.inf
    unplaced: list[int] = []

    for ei in order:
        shape, tmpl = shapes[ei], templates[ei]
        base_r = shape.bounding_radius
        factor = 0.8
        choice = None
        while choice is None and factor >= 1e-3:
            for pj in pt_order:
                if taken[pj] or skeleton.widths[pj] > width_cap:
                    continue
                s_cand = (skeleton.widths[pj] / base_r) if free[ei] else tmpl.s
                r_cand = s_cand * base_r
                p = skeleton.points[pj]
                if all(np.hypot(*(p - q)) >= factor * (r_cand + rq)
                       for q, rq in placed):
                    choice = (pj, s_cand, r_cand)
                    break
            if choice is None:
                factor *= 0.8
        if choice is None:
            unplaced.append(ei)
            continue
        pj, s_cand, r_cand = choice
        taken[pj] = True
        width_cap = min(width_cap, float(skeleton.widths[pj]))
        p = skeleton.points[pj] + jitter[ei]
        if field is not None and not _interior_at(field, p):
            p = skeleton.points[pj]
        pos[ei] = p
        s_out[ei] = s_cand
        placed.append((p, r_cand))

    for ei in unplaced:
        if field is None:
            raise PlacementOverflow(
                f"{len(unplaced)} shapes exceed {len(skeleton)} skeleton samples"
                " and no container field was given for random fallback")
        p = _random_interior(rng, field)
        pos[ei] = p
        if free[ei]:
            depth = -field.signed_distance[int(p[1] * field.scale),
                                           int(p[0] * field.scale)] / field.scale
            s_out[ei] = max(depth, 1e-3) / shapes[ei].bounding_radius

    s_out = np.maximum(_area_budget(s_out, free, shapes, field, fill), 1e-3)
    out = []
    for ei in range(n):
        tmpl = templates[ei]
        r = tmpl.r
        if tmpl.rotation_mode == "range":
            r = 0.5 * (tmpl.rotation_range[0] + tmpl.rotation_range[1])
        out.append(replace(tmpl, t=(float(pos[ei, 0]), float(pos[ei, 1])),
                           s=float(s_out[ei]), r=r))
    return out


def place_random(field: ContainerField, shapes: list[BezierShape],
                 rng_seed: int = 0,
                 templates: list[ElementTransform] | None = None,
                 fill: float = 0.5) -> list[ElementTransform]:
    """Seeded uniform placement over the container interior."""
    n = len(shapes)
    if templates is None:
        templates = [ElementTransform() for _ in range(n)]
    if len(templates) != n:
        raise ValidationError("templates/shapes length mismatch")
    rng = np.random.default_rng(rng_seed)
    pos = np.zeros((n, 2))
    s_out = np.array([t.s for t in templates])
    free = np.array([t.scale_mode == "free" for t in templates])
    for ei in range(n):
        p = _random_interior(rng, field)
        pos[ei] = p
        if free[ei]:
            depth = -field.signed_distance[int(p[1] * field.scale),
                                           int(p[0] * field.scale)] / field.scale
            s_out[ei] = max(depth, 1e-3) / shapes[ei].bounding_radius
    s_out = np.maximum(_area_budget(s_out, free, shapes, field, fill), 1e-3)
    out = []
    for ei in range(n):
        tmpl = templates[ei]
        r = tmpl.r
        if tmpl.rotation_mode == "range":
            r = 0.5 * (tmpl.rotation_range[0] + tmpl.rotation_range[1])
        out.append(replace(tmpl, t=(float(pos[ei, 0]), float(pos[ei, 1])),
                           s=float(s_out[ei]), r=r))
    return out
