"""Minimal SVG ingestion and export.

Ingestion accepts one closed subpath per <path> element using the M/L/C/Z
command subset (upper or lower case); everything else is rejected loudly
rather than approximated. Export bakes each element's transform into absolute
coordinates so downstream tools need no transform support.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShape, ParseError
from .vecgeom import (BezierShape, ElementTransform, Polyline, apply_transform,
                      validate_simple)

_NUM_RE = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TOKEN = re.compile(rf"([MmLlCcZzHhVvSsQqTtAa])|({_NUM_RE})")


def _tokenize(d: str):
    tokens = []
    pos = 0
    for m in _TOKEN.finditer(d):
        gap = d[pos:m.start()]
        if gap.strip(" ,\t\r\n") != "":
            raise ParseError(f"unexpected characters {gap.strip()!r} in path data")
        if m.group(1):
            tokens.append(("cmd", m.group(1)))
        else:
            tokens.append(("num", float(m.group(2))))
        pos = m.end()
    if d[pos:].strip(" ,\t\r\n") != "":
        raise ParseError(f"unexpected characters {d[pos:].strip()!r} in path data")
    return tokens


def _line_cubic(p0, p3):
    p0 = np.asarray(p0)
    p3 = np.asarray(p3)
    return np.stack([p0, p0 + (p3 - p0) / 3.0, p0 + 2.0 * (p3 - p0) / 3.0, p3])


def parse_path_d(d: str) -> np.ndarray:
    """Parse one closed M/L/C/Z subpath into an (N, 4, 2) cubic segment array.

    Lines are promoted to cubics with control points at the chord thirds. Z
    closes back to the start with a line when the endpoints differ. Raises
    ParseError for unsupported commands (H, V, S, Q, T, A), multiple subpaths,
    or a missing Z.
    """
    tokens = _tokenize(d)
    if not tokens:
        raise ParseError("empty path data")
    i = 0

    def take(k):
        nonlocal i
        if i + k > len(tokens) or any(tokens[i + j][0] != "num" for j in range(k)):
            raise ParseError("path data ended mid-command or has a stray letter")
        vals = [tokens[i + j][1] for j in range(k)]
        i += k
        return vals

    if tokens[0][0] != "cmd" or tokens[0][1] not in "Mm":
        raise ParseError("path data must start with M or m")

    segs: list[np.ndarray] = []
    start = cur = None
    closed = False
    while i < len(tokens):
        kind, val = tokens[i]
        if kind != "cmd":
            raise ParseError(f"expected a command letter, got number {val}")
        i += 1
        if closed:
            raise ParseError("multiple subpaths are not supported (data after Z)")
        rel = val.islower()
        op = val.upper()
        if op == "M":
            if start is not None:
                raise ParseError("multiple subpaths are not supported (second M)")
            x, y = take(2)
            base = cur if (rel and cur is not None) else (0.0, 0.0)
            cur = (base[0] + x, base[1] + y) if rel else (x, y)
            start = cur
            # extra coordinate pairs after M are implicit linetos
            while i < len(tokens) and tokens[i][0] == "num":
                x, y = take(2)
                nxt = (cur[0] + x, cur[1] + y) if rel else (x, y)
                segs.append(_line_cubic(cur, nxt))
                cur = nxt
        elif op == "L":
            while True:
                x, y = take(2)
                nxt = (cur[0] + x, cur[1] + y) if rel else (x, y)
                segs.append(_line_cubic(cur, nxt))
                cur = nxt
                if i >= len(tokens) or tokens[i][0] != "num":
                    break
        elif op == "C":
            while True:
                v = take(6)
                if rel:
                    pts = [(cur[0] + v[0], cur[1] + v[1]),
                           (cur[0] + v[2], cur[1] + v[3]),
                           (cur[0] + v[4], cur[1] + v[5])]
                else:
                    pts = [(v[0], v[1]), (v[2], v[3]), (v[4], v[5])]
                segs.append(np.array([cur, pts[0], pts[1], pts[2]]))
                cur = pts[2]
                if i >= len(tokens) or tokens[i][0] != "num":
                    break
        elif op == "Z":
            if cur != start:
                segs.append(_line_cubic(cur, start))
                cur = start
            closed = True
        else:
            raise ParseError(f"unsupported path command {val!r} (only M/L/C/Z)")
    if not closed:
        raise ParseError("path is not closed with Z")
    if not segs:
        raise ParseError("path has no segments")
    return np.stack(segs)


@dataclass(frozen=True)
class SvgPath:
    d: str
    fill: str | None
    id: str | None


@dataclass(frozen=True)
class SvgDocument:
    paths: list[SvgPath]
    width: float | None
    height: float | None


def _doc_size(root) -> tuple[float | None, float | None]:
    def num(s):
        if s is None:
            return None
        m = re.match(rf"\s*({_NUM_RE})", s)
        return float(m.group(1)) if m else None

    vb = root.get("viewBox")
    if vb:
        parts = vb.replace(",", " ").split()
        if len(parts) == 4:
            return float(parts[2]), float(parts[3])
    return num(root.get("width")), num(root.get("height"))


def read_svg(path_or_text: str, from_text: bool = False) -> SvgDocument:
    """Extract <path> elements (any namespace) and the document size."""
    try:
        root = (ET.fromstring(path_or_text) if from_text
                else ET.parse(path_or_text).getroot())
    except ET.ParseError as e:
        raise ParseError(f"invalid SVG XML: {e}") from e
    except OSError as e:
        raise ParseError(f"cannot read SVG: {e}") from e
    paths = []
    for el in root.iter():
        tag = el.tag.rsplit("}", 1)[-1]
        if tag == "path":
            d = el.get("d")
            if d is None:
                raise ParseError("path element without d attribute")
            paths.append(SvgPath(d=d, fill=el.get("fill"), id=el.get("id")))
    return SvgDocument(paths=paths, width=_doc_size(root)[0], height=_doc_size(root)[1])


@dataclass(frozen=True)
class LoadedShape:
    """A recentered shape plus where it originally sat and how it was filled."""

    shape: BezierShape
    centroid: np.ndarray
    fill: str | None


def load_shapes(svg_path: str, skip_ids: tuple[str, ...] = (),
                from_text: bool = False) -> list[LoadedShape]:
    """Ingest every path of an SVG as a validated, recentered BezierShape.

    Shapes are recentered on their area centroid; the original centroid is
    returned so ``ElementTransform(t=centroid)`` reproduces the file geometry.
    Self-intersecting or degenerate outlines are rejected.
    """
    doc = read_svg(svg_path, from_text=from_text)
    out = []
    for k, p in enumerate(doc.paths):
        if p.id in skip_ids:
            continue
        name = p.id or f"path-{k}"
        try:
            shape = BezierShape(parse_path_d(p.d), id=name)
            validate_simple(shape)
        except (ParseError, DegenerateShape) as e:
            raise type(e)(f"{svg_path if not from_text else '<svg>'}:{name}: {e}") from e
        recentered, c = shape.recentered()
        out.append(LoadedShape(shape=recentered, centroid=c, fill=p.fill))
    if not out:
        raise ParseError(f"no usable path elements in {svg_path}")
    return out


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def path_d_for(segments: np.ndarray) -> str:
    parts = [f"M {_fmt(segments[0, 0, 0])} {_fmt(segments[0, 0, 1])}"]
    for seg in segments:
        parts.append("C " + " ".join(_fmt(v) for v in seg[1:].ravel()))
    parts.append("Z")
    return " ".join(parts)


def export_svg(shapes: list[BezierShape], transforms: list[ElementTransform],
               fills: list[str | None] | None = None,
               container: Polyline | None = None,
               canvas: tuple[float, float] = (600.0, 600.0)) -> str:
    """Serialize a layout as standalone SVG 1.1 with baked coordinates.

    One path per element, fill from ``fills`` (default mid gray), six-decimal
    fixed-point coordinates. The container outline, when given, is a stroked
    reference layer with id="container" that re-ingestion skips.
    """
    w, h = canvas
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:g}" height="{h:g}" '
        f'viewBox="0 0 {w:g} {h:g}">',
        f'<rect width="{w:g}" height="{h:g}" fill="#ffffff"/>',
    ]
    if container is not None:
        v = container.vertices
        d = ("M " + _fmt(v[0, 0]) + " " + _fmt(v[0, 1]) + " L "
             + " ".join(_fmt(x) + " " + _fmt(y) for x, y in v[1:]) + " Z")
        lines.append(f'<path id="container" d="{d}" fill="none" '
                     'stroke="#999999" stroke-width="1"/>')
    for k, (shape, xf) in enumerate(zip(shapes, transforms)):
        baked = apply_transform(shape, xf)
        fill = (fills[k] if fills and fills[k] else "#666666")
        ident = shape.id or f"element-{k}"
        lines.append(f'<path id="{ident}" d="{path_d_for(baked.segments)}" '
                     f'fill="{fill}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
