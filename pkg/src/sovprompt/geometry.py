"""Bounding-box arithmetic and area-priority overlap resolution for faces.

Boxes are ``(x_min, y_min, x_max, y_max)`` in real-valued pixel coordinates
with the origin at the image's top-left corner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence

from .errors import ConfigError, SchemaError

if TYPE_CHECKING:
    from .landmarks import LandmarkSet

DEFAULT_EPSILON = 0.5

# landmark points may sit this fraction of the box size outside the box
LANDMARK_MARGIN_FRAC = 0.10


@dataclass(frozen=True, order=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise SchemaError(f"box coordinates must be finite, got {coords}")
        if min(coords) < 0:
            raise SchemaError(f"box coordinates must be non-negative, got {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise SchemaError(f"box must have positive area, got {coords}")

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "BoundingBox":
        if len(seq) != 4:
            raise SchemaError(f"box needs 4 coordinates, got {len(seq)}")
        return cls(*(float(v) for v in seq))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def as_list(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class FaceDetection:
    box: BoundingBox
    confidence: float = 1.0
    landmarks: Optional["LandmarkSet"] = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise SchemaError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.landmarks is not None:
            b = self.box
            mx = LANDMARK_MARGIN_FRAC * b.width
            my = LANDMARK_MARGIN_FRAC * b.height
            for x, y in self.landmarks.points:
                if not (b.x_min - mx <= x <= b.x_max + mx and b.y_min - my <= y <= b.y_max + my):
                    raise SchemaError(
                        f"landmark ({x}, {y}) lies outside box {b.as_list()} "
                        f"beyond the {LANDMARK_MARGIN_FRAC:.0%} margin"
                    )


@dataclass(frozen=True)
class AnnotatedFace:
    """A retained face carrying its 1-based display id."""

    id: int
    box: BoundingBox
    landmarks: Optional["LandmarkSet"] = None
    confidence: float = 1.0
    area: float = field(init=False)

    def __post_init__(self):
        if self.id < 1:
            raise SchemaError(f"face id must be positive, got {self.id}")
        object.__setattr__(self, "area", area(self.box))

    def to_detection(self) -> FaceDetection:
        return FaceDetection(self.box, self.confidence, self.landmarks)

    def to_dict(self) -> dict:
        d = {"id": self.id, "box": self.box.as_list(), "area": self.area,
             "confidence": self.confidence}
        if self.landmarks is not None:
            d["landmarks"] = self.landmarks.to_dict()
        return d


def area(box: BoundingBox) -> float:
    return (box.x_max - box.x_min) * (box.y_max - box.y_min)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return max(0.0, w) * max(0.0, h)


def overlap_ratio(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over the area of the smaller box (not IoU).

    Saturates at 1.0 when one box contains the other.
    """
    return intersection_area(a, b) / min(area(a), area(b))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    return inter / (area(a) + area(b) - inter)


def _check_epsilon(epsilon: float) -> None:
    if not (isinstance(epsilon, (int, float)) and 0.0 < epsilon < 1.0):
        raise ConfigError(f"epsilon must lie in the open interval (0, 1), got {epsilon!r}")


def _priority(det: FaceDetection, index: int):
    b = det.box
    # larger first; ties fall back to geometry, then confidence, then input position
    return (-area(b), b.x_min, b.y_min, b.x_max, b.y_max, -det.confidence, index)


def resolve_overlaps(detections: Iterable[FaceDetection],
                     epsilon: float = DEFAULT_EPSILON) -> List[AnnotatedFace]:
    """Keep the largest non-occluded faces and number them 1..n.

    Candidates are visited from largest to smallest area. A candidate is kept
    only if its overlap ratio with every face kept so far is at most
    ``epsilon``; since every kept face is at least as large, a conflict always
    discards the candidate.
    """
    _check_epsilon(epsilon)
    detections = list(detections)
    order = sorted(range(len(detections)), key=lambda i: _priority(detections[i], i))

    kept: List[FaceDetection] = []
    for i in order:
        cand = detections[i]
        if all(overlap_ratio(cand.box, k.box) <= epsilon for k in kept):
            kept.append(cand)

    return [AnnotatedFace(n, d.box, d.landmarks, d.confidence)
            for n, d in enumerate(kept, start=1)]


def brute_force_resolve(detections: Iterable[FaceDetection],
                        epsilon: float = DEFAULT_EPSILON) -> List[AnnotatedFace]:
    """Naive reference for :func:`resolve_overlaps`, used as a test oracle.

    Selection-sorts by area, computes every pairwise overlap up front, and
    settles each conflict by explicitly comparing the two areas.
    """
    _check_epsilon(epsilon)
    dets = list(detections)
    n = len(dets)

    remaining = list(range(n))
    ordered = []
    while remaining:
        best = remaining[0]
        for j in remaining[1:]:
            if _priority(dets[j], j) < _priority(dets[best], best):
                best = j
        ordered.append(best)
        remaining.remove(best)

    inter = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                bi, bj = dets[i].box, dets[j].box
                ai = (bi.x_max - bi.x_min) * (bi.y_max - bi.y_min)
                aj = (bj.x_max - bj.x_min) * (bj.y_max - bj.y_min)
                w = min(bi.x_max, bj.x_max) - max(bi.x_min, bj.x_min)
                h = min(bi.y_max, bj.y_max) - max(bi.y_min, bj.y_min)
                inter[i][j] = (max(0.0, w) * max(0.0, h)) / min(ai, aj)

    final: List[int] = []
    for k in ordered:
        keep = True
        for j in list(final):
            if inter[k][j] > epsilon:
                ak, aj = area(dets[k].box), area(dets[j].box)
                # keep the strictly larger face; on a tie the already-kept one wins
                if ak > aj:
                    final.remove(j)
                else:
                    keep = False
                    break
        if keep:
            final.append(k)

    return [AnnotatedFace(n_id, dets[i].box, dets[i].landmarks, dets[i].confidence)
            for n_id, i in enumerate(final, start=1)]
