"""Hard-mask layout quality metrics and the cross-run comparison table.

All four metrics are computed on binary masks (pixel center strictly inside
an outline), never on soft coverage, so two implementations of the same
layout agree exactly:

  LC   covered interior / interior            (layout coverage)
  OO   multiply covered interior / interior   (object overlap)
  EA   object outside interior / interior     (exceed area)
  L-nU mean squared distance (px) from empty interior pixels to the nearest
       object pixel; infinity when the layout is object-free
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParseError, ResolutionMismatch, ValidationError
from .losses import ContainerField, ContainerSource
from .render import rasterize_hard
from .vecgeom import BezierShape, ElementTransform


@dataclass(frozen=True)
class QualityReport:
    lc: float
    oo: float
    ea: float
    l_nu: float
    resolution: int
    counts: dict

    def to_dict(self) -> dict:
        return {"lc": self.lc, "oo": self.oo, "ea": self.ea, "l_nu": self.l_nu,
                "resolution": self.resolution, "counts": dict(self.counts)}

    def to_json(self, extra: dict | None = None) -> str:
        """Stable JSON encoding (sorted keys, shortest round-trip floats;
        an infinite l_nu serializes as the bare token Infinity)."""
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        return json.dumps(doc, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "QualityReport":
        try:
            doc = json.loads(text)
            return QualityReport(lc=float(doc["lc"]), oo=float(doc["oo"]),
                                 ea=float(doc["ea"]), l_nu=float(doc["l_nu"]),
                                 resolution=int(doc["resolution"]),
                                 counts=dict(doc["counts"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed quality report: {e}") from e


def evaluate(shapes: list[BezierShape], transforms: list[ElementTransform],
             container: ContainerSource | ContainerField,
             resolution: int = 600) -> QualityReport:
    """Score a layout against its container at the given square resolution
    (>= 100; metric definitions degrade below that)."""
    if resolution < 100:
        raise ValidationError(f"metrics resolution {resolution} below minimum 100")
    if isinstance(container, ContainerField):
        fld = container
        if fld.resolution != (resolution, resolution):
            if fld.source is None:
                raise ResolutionMismatch(
                    f"container field is {fld.resolution}, requested {resolution}, "
                    "and no source is attached for re-rasterization")
            fld = fld.source.field(resolution)
    else:
        fld = container.field(resolution)

    hard = rasterize_hard(shapes, transforms, resolution)
    obj = hard.object_mask()
    multi = hard.overlap_mask()
    inside = fld.interior

    n_in = int(np.count_nonzero(inside))
    n_obj_in = int(np.count_nonzero(obj & inside))
    n_multi_in = int(np.count_nonzero(multi & inside))
    n_exceed = int(np.count_nonzero(obj & ~inside))
    n_obj = int(np.count_nonzero(obj))

    empty = inside & ~obj
    if n_obj == 0:
        l_nu = math.inf
    elif not empty.any():
        l_nu = 0.0
    else:
        dist = ndimage.distance_transform_edt(~obj)
        l_nu = float(np.mean(dist[empty] ** 2))

    return QualityReport(
        lc=n_obj_in / n_in, oo=n_multi_in / n_in, ea=n_exceed / n_in, l_nu=l_nu,
        resolution=resolution,
        counts={"interior": n_in, "object_interior": n_obj_in,
                "overlap_interior": n_multi_in, "exceed": n_exceed,
                "object_total": n_obj})


def compare(reports: list[dict], labels: list[str] | None = None) -> str:
    """Render quality reports as a CSV table, one row per run in input order.

    Each report is a decoded metrics JSON document; optional "label" and
    "time_s" keys fill their columns (explicit ``labels`` win). Missing wall
    times stay blank.
    """
    if labels is not None and len(labels) != len(reports):
        raise ValidationError("labels/reports length mismatch")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "lc", "oo", "ea", "l_nu", "resolution", "time_s"])
    for i, doc in enumerate(reports):
        label = (labels[i] if labels is not None
                 else doc.get("label", f"run-{i}"))
        try:
            row = [label, repr(float(doc["lc"])), repr(float(doc["oo"])),
                   repr(float(doc["ea"])), repr(float(doc["l_nu"])),
                   str(int(doc["resolution"]))]
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"report {label!r} is missing metric fields: {e}") from e
        t = doc.get("time_s")
        row.append("" if t is None else repr(float(t)))
        writer.writerow(row)
    return buf.getvalue()
