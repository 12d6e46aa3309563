"""Manifest ingestion, difficulty buckets and dataset statistics.

A manifest is a JSON document (``schema_version`` 1, schema shipped as
``data/manifest.schema.json``) listing images and their faces. The same
format doubles as a detections file when ``gt_emotion`` is omitted.
"""
from __future__ import annotations

import enum
import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import jsonschema

from .emotions import Emotion
from .errors import SchemaError
from .geometry import BoundingBox, FaceDetection
from .landmarks import LandmarkSet

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Reference sizes of the external news-photo dataset (images, faces); not shipped.
PUBLISHED_STATS = {
    "Easy": (76, 174),
    "Medium": (34, 171),
    "Hard": (9, 114),
    "Total": (119, 459),
}


class DifficultyBucket(str, enum.Enum):
    EASY = "Easy"
    MEDIUM = "Medium"
    HARD = "Hard"


BUCKETS = tuple(DifficultyBucket)


@dataclass(frozen=True)
class FaceRecord:
    box: BoundingBox
    landmarks: Optional[LandmarkSet] = None
    gt_emotion: Optional[Emotion] = None
    confidence: float = 1.0

    def detection(self) -> FaceDetection:
        return FaceDetection(self.box, self.confidence, self.landmarks)

    def to_dict(self) -> dict:
        d = {"box": self.box.as_list(), "confidence": self.confidence}
        if self.gt_emotion is not None:
            d["gt_emotion"] = self.gt_emotion.value
        if self.landmarks is not None:
            d["landmarks"] = self.landmarks.to_dict()
        return d


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    faces: tuple
    split_tag: Optional[str] = None

    def detections(self) -> List[FaceDetection]:
        return [f.detection() for f in self.faces]

    def to_dict(self) -> dict:
        return {"image_path": self.image_path, "split_tag": self.split_tag,
                "faces": [f.to_dict() for f in self.faces]}


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    schema_version: int = SCHEMA_VERSION
    root: Path = field(default_factory=Path)

    def resolve(self, image_path: str) -> Path:
        p = Path(image_path)
        return p if p.is_absolute() else self.root / p

    def entry(self, image_path: str) -> ManifestEntry:
        for e in self.entries:
            if e.image_path == image_path:
                return e
        raise KeyError(image_path)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version,
                "entries": [e.to_dict() for e in self.entries]}


@lru_cache(maxsize=1)
def manifest_schema() -> dict:
    text = resources.files("sovprompt").joinpath("data/manifest.schema.json").read_text("utf-8")
    return json.loads(text)


def _where(path: Iterable) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out.lstrip(".") or "<root>"


def parse_manifest(data, *, source: str = "<manifest>", require_gt: bool = True,
                   root: Optional[Path] = None) -> DatasetManifest:
    validator = jsonschema.Draft202012Validator(manifest_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(f"{source}: {_where(e.absolute_path)}: {e.message}")

    entries = []
    seen = set()
    for i, raw in enumerate(data["entries"]):
        path = raw["image_path"]
        if path in seen:
            raise SchemaError(f"{source}: entries[{i}].image_path: duplicate {path!r}")
        seen.add(path)
        faces = []
        for j, rf in enumerate(raw["faces"]):
            where = f"{source}: entries[{i}].faces[{j}]"
            try:
                box = BoundingBox.from_seq(rf["box"])
                lm = rf.get("landmarks")
                landmarks = LandmarkSet.from_json(lm) if lm is not None else None
                conf = float(rf.get("confidence", 1.0))
                FaceDetection(box, conf, landmarks)
            except SchemaError as exc:
                raise SchemaError(f"{where}: {exc}") from None
            label = rf.get("gt_emotion")
            if label is None:
                if require_gt:
                    raise SchemaError(f"{where}.gt_emotion: required for evaluation manifests")
                emotion = None
            else:
                try:
                    emotion = Emotion.from_label(label)
                except ValueError as exc:
                    raise SchemaError(f"{where}.gt_emotion: {exc}") from None
            faces.append(FaceRecord(box, landmarks, emotion, conf))
        entries.append(ManifestEntry(path, tuple(faces), raw.get("split_tag")))
    return DatasetManifest(entries, data["schema_version"], root or Path("."))


def load_manifest(path, *, require_gt: bool = True, check_images: bool = True) -> DatasetManifest:
    """Load and validate a manifest; image paths resolve relative to its folder."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"{path}: cannot read manifest: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    manifest = parse_manifest(data, source=str(path), require_gt=require_gt, root=path.parent)
    if check_images:
        for e in manifest.entries:
            if not manifest.resolve(e.image_path).exists():
                warnings.warn(f"{path}: image {e.image_path!r} not found")
    return manifest


def load_detections(path) -> DatasetManifest:
    return load_manifest(path, require_gt=False)


def bucket_for_count(n_faces: int) -> DifficultyBucket:
    if n_faces <= 3:
        return DifficultyBucket.EASY
    if n_faces <= 7:
        return DifficultyBucket.MEDIUM
    return DifficultyBucket.HARD


def bucket(entry) -> DifficultyBucket:
    """Difficulty from the ground-truth face count: <=3 Easy, 4-7 Medium, >=8 Hard."""
    n = entry if isinstance(entry, int) else len(entry.faces)
    return bucket_for_count(n)


def stats(manifest: DatasetManifest) -> Dict[str, Dict[str, int]]:
    out = {b.value: {"images": 0, "faces": 0} for b in BUCKETS}
    for e in manifest.entries:
        row = out[bucket(e).value]
        row["images"] += 1
        row["faces"] += len(e.faces)
    out["Total"] = {
        "images": sum(out[b.value]["images"] for b in BUCKETS),
        "faces": sum(out[b.value]["faces"] for b in BUCKETS),
    }
    return out


def from_retinaface(result, image_path: str) -> dict:
    """Convert RetinaFace-style output to one manifest entry.

    Expects either a mapping ``{"face_1": {...}, ...}`` or a list of face
    dicts, each holding ``facial_area`` ``[x1, y1, x2, y2]``, ``score`` and
    ``landmarks`` with ``left_eye``, ``right_eye``, ``nose``, ``mouth_left``
    and ``mouth_right``. Eye and mouth-corner names are reassigned by x
    coordinate, since detectors differ on subject- vs image-relative naming.
    Negative coordinates are clipped to zero.
    """
    faces_in = list(result.values()) if isinstance(result, dict) else list(result)
    faces = []
    for f in faces_in:
        box = [max(0.0, float(v)) for v in f["facial_area"]]
        if box != [float(v) for v in f["facial_area"]]:
            log.warning("%s: clipped negative box coordinates %s", image_path, f["facial_area"])
        face = {"box": box, "confidence": float(f.get("score", 1.0))}
        lm = f.get("landmarks")
        if lm:
            eyes = sorted([lm["left_eye"], lm["right_eye"]], key=lambda p: p[0])
            mouth = sorted([lm["mouth_left"], lm["mouth_right"]], key=lambda p: p[0])
            face["landmarks"] = {
                "left_eye": [float(v) for v in eyes[0]],
                "right_eye": [float(v) for v in eyes[1]],
                "nose": [float(v) for v in lm["nose"]],
                "mouth_left": [float(v) for v in mouth[0]],
                "mouth_right": [float(v) for v in mouth[1]],
            }
        faces.append(face)
    return {"image_path": image_path, "faces": faces}


def synthetic_manifest_path() -> Path:
    """Path of the bundled synthetic evaluation manifest."""
    return Path(str(resources.files("sovprompt").joinpath("data/synthetic/manifest.json")))


def four_face_fixture_path() -> Path:
    return Path(str(resources.files("sovprompt").joinpath("data/four_face/manifest.json")))
