"""Facial landmark sets and a small geometric expression heuristic.

Only the five-point layout (eyes, nose tip, mouth corners) gets features;
other layouts are carried through for drawing only. Point names follow image
space: ``left_eye`` is the eye with the smaller x coordinate.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

from .errors import SchemaError

log = logging.getLogger(__name__)

FIVE_POINT_NAMES = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")

Point = Tuple[float, float]


class Scheme(str, enum.Enum):
    FIVE_POINT = "five_point"
    GENERIC = "generic"


class Hint(str, enum.Enum):
    SMILING_LIKELY = "SmilingLikely"
    NEUTRAL_LIKELY = "NeutralLikely"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class LandmarkSet:
    points: Tuple[Point, ...]
    scheme: Scheme = Scheme.FIVE_POINT

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise SchemaError("landmark set needs at least one point")
        if not all(math.isfinite(c) for p in pts for c in p):
            raise SchemaError("landmark coordinates must be finite")
        if self.scheme is Scheme.FIVE_POINT:
            if len(pts) != 5:
                raise SchemaError(f"five-point scheme needs 5 points, got {len(pts)}")
            if self.mirrored:
                log.warning("landmark set has left_eye.x >= right_eye.x: %s", pts[:2])

    @property
    def mirrored(self) -> bool:
        """True when a five-point set violates the left-eye-left convention."""
        return self.scheme is Scheme.FIVE_POINT and self.points[0][0] >= self.points[1][0]

    def named(self) -> Dict[str, Point]:
        if self.scheme is not Scheme.FIVE_POINT:
            raise ValueError("only five-point sets have named points")
        return dict(zip(FIVE_POINT_NAMES, self.points))

    def to_dict(self):
        if self.scheme is Scheme.FIVE_POINT:
            return {k: list(v) for k, v in self.named().items()}
        return [list(p) for p in self.points]

    @classmethod
    def from_json(cls, obj) -> "LandmarkSet":
        """Accept either a name->point mapping (five-point) or a list of points."""
        if isinstance(obj, Mapping):
            missing = [k for k in FIVE_POINT_NAMES if k not in obj]
            if missing:
                raise SchemaError(f"five-point landmarks missing {missing}")
            return cls(tuple(tuple(obj[k]) for k in FIVE_POINT_NAMES), Scheme.FIVE_POINT)
        pts = tuple(tuple(p) for p in obj)
        if any(len(p) != 2 for p in pts):
            raise SchemaError("each landmark point needs exactly 2 coordinates")
        return cls(pts, Scheme.GENERIC)


@dataclass(frozen=True)
class HintThresholds:
    lift: float = 0.05
    smile_width: float = 0.55


@dataclass(frozen=True)
class ExpressionFeatures:
    mouth_width_ratio: Optional[float] = None
    mouth_corner_lift: Optional[float] = None
    eye_mouth_vertical_ratio: Optional[float] = None
    hint: Hint = Hint.UNKNOWN

    def to_dict(self) -> dict:
        return {
            "mouth_width_ratio": self.mouth_width_ratio,
            "mouth_corner_lift": self.mouth_corner_lift,
            "eye_mouth_vertical_ratio": self.eye_mouth_vertical_ratio,
            "hint": self.hint.value,
        }


def classify_hint(mouth_width_ratio: float, mouth_corner_lift: float,
                  thresholds: HintThresholds = HintThresholds()) -> Hint:
    if mouth_corner_lift > thresholds.lift and mouth_width_ratio > thresholds.smile_width:
        return Hint.SMILING_LIKELY
    if abs(mouth_corner_lift) <= thresholds.lift:
        return Hint.NEUTRAL_LIKELY
    return Hint.UNKNOWN


def extract_features(landmarks: LandmarkSet,
                     thresholds: HintThresholds = HintThresholds()) -> ExpressionFeatures:
    """Compute scale-, translation- and rotation-free mouth/eye ratios.

    Distances are measured in a face frame whose x axis runs along the eye
    line and whose y axis points down the face. The reference line for the
    corner lift sits at twice the nose depth, i.e. the line for which the nose
    lies midway between it and the eyes; neutral mouths land close to it and
    raised corners sit above it (positive lift).
    """
    if landmarks.scheme is not Scheme.FIVE_POINT:
        return ExpressionFeatures()

    (lex, ley), (rex, rey), (nx, ny), (mlx, mly), (mrx, mry) = landmarks.points
    ex, ey = rex - lex, rey - ley
    iod = math.hypot(ex, ey)
    if iod == 0.0:
        return ExpressionFeatures()

    ux, uy = ex / iod, ey / iod
    dx, dy = -uy, ux
    cx, cy = (lex + rex) / 2.0, (ley + rey) / 2.0

    def depth(px, py):
        return (px - cx) * dx + (py - cy) * dy

    mouth_width = math.hypot(mrx - mlx, mry - mly) / iod
    corner_depth = (depth(mlx, mly) + depth(mrx, mry)) / 2.0
    lift = (2.0 * depth(nx, ny) - corner_depth) / iod
    vertical = corner_depth / iod

    return ExpressionFeatures(
        mouth_width_ratio=mouth_width,
        mouth_corner_lift=lift,
        eye_mouth_vertical_ratio=vertical,
        hint=classify_hint(mouth_width, lift, thresholds),
    )


def five_point(left_eye: Sequence[float], right_eye: Sequence[float], nose: Sequence[float],
               mouth_left: Sequence[float], mouth_right: Sequence[float]) -> LandmarkSet:
    return LandmarkSet((tuple(left_eye), tuple(right_eye), tuple(nose),
                        tuple(mouth_left), tuple(mouth_right)), Scheme.FIVE_POINT)
