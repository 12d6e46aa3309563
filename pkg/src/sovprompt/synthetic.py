"""Deterministic synthetic crowd images for offline end-to-end runs.

Faces are flat ellipses on a noisy background, laid out on a grid so no two
boxes touch. Every image gets distinct pixels (seeded noise), which the
ground-truth mock relies on to tell images apart.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .annotator import encode_png, SovImage
from .emotions import VOCABULARY

DEFAULT_FACE_COUNTS = (1, 2, 3, 2, 3, 4, 5, 6, 7, 8, 9, 10)
IMAGE_SIZE = (480, 360)

_SKIN = np.array([224, 182, 150], dtype=np.uint8)
_FEATURE = np.array([40, 30, 30], dtype=np.uint8)


def face_boxes(n: int, rng: np.random.Generator, size=IMAGE_SIZE) -> List[List[int]]:
    w, h = size
    cols = max(1, math.ceil(math.sqrt(n * w / h)))
    rows = math.ceil(n / cols)
    cw, ch = w // cols, h // rows
    boxes = []
    for i in range(n):
        r, c = divmod(i, cols)
        side = int(min(cw, ch) * rng.uniform(0.55, 0.8))
        x0 = c * cw + int(rng.integers(1, cw - side))
        y0 = r * ch + int(rng.integers(1, ch - side))
        boxes.append([x0, y0, x0 + side, y0 + side])
    return boxes


def face_landmarks(box: Sequence[float], emotion: str) -> Dict[str, List[float]]:
    x0, y0, x1, _ = box
    s = x1 - x0
    mouth_y = y0 + (0.70 if emotion == "Happy" else 0.76) * s
    return {
        "left_eye": [x0 + 0.32 * s, y0 + 0.38 * s],
        "right_eye": [x0 + 0.68 * s, y0 + 0.38 * s],
        "nose": [x0 + 0.5 * s, y0 + 0.56 * s],
        "mouth_left": [x0 + 0.34 * s, mouth_y],
        "mouth_right": [x0 + 0.66 * s, mouth_y],
    }


def draw_face(img: np.ndarray, box: Sequence[int], landmarks: Dict[str, List[float]]) -> None:
    x0, y0, x1, y1 = box
    yy, xx = np.mgrid[y0:y1, x0:x1]
    cx, cy = (x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2
    rx, ry = (x1 - x0) / 2, (y1 - y0) / 2
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1
    img[y0:y1, x0:x1][inside] = _SKIN
    dot = max(1, (x1 - x0) // 20)
    for name in ("left_eye", "right_eye"):
        px, py = (int(round(v)) for v in landmarks[name])
        img[py - dot:py + dot + 1, px - dot:px + dot + 1] = _FEATURE
    (lx, ly), (rx_, ry_) = landmarks["mouth_left"], landmarks["mouth_right"]
    my = int(round((ly + ry_) / 2))
    img[my - dot // 2:my + dot // 2 + 1, int(round(lx)):int(round(rx_)) + 1] = _FEATURE


def make_image(n_faces: int, seed: int, labels: Sequence[str], size=IMAGE_SIZE):
    rng = np.random.default_rng(seed)
    w, h = size
    base = rng.integers(60, 200, size=3)
    img = np.clip(base + rng.integers(-4, 5, size=(h, w, 3)), 0, 255).astype(np.uint8)
    faces = []
    for box, label in zip(face_boxes(n_faces, rng, size), labels):
        lm = face_landmarks(box, label)
        draw_face(img, box, lm)
        faces.append({"box": [float(v) for v in box], "confidence": 0.99,
                      "gt_emotion": label, "landmarks": lm})
    return img, faces


def write_dataset(out_dir, face_counts: Sequence[int] = DEFAULT_FACE_COUNTS, seed: int = 0,
                  labels: Optional[Sequence[Sequence[str]]] = None) -> Path:
    """Write PNGs plus ``manifest.json`` into ``out_dir`` and return the manifest path.

    Without explicit ``labels`` the ground-truth emotions cycle through the
    seven-label vocabulary across the whole dataset.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    k = 0
    for i, n in enumerate(face_counts):
        if labels is not None:
            lab = list(labels[i])
        else:
            lab = [VOCABULARY[(k + j) % len(VOCABULARY)] for j in range(n)]
        k += n
        img, faces = make_image(n, seed * 1000 + i, lab)
        name = f"crowd_{i:02d}.png"
        encode_png(SovImage(img, []), out / name)
        entries.append({"image_path": name, "split_tag": "synthetic", "faces": faces})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"schema_version": 1, "entries": entries}, indent=1) + "\n")
    return manifest


FOUR_FACE_BOXES = ([10, 40, 130, 160], [150, 50, 250, 150], [270, 60, 350, 140], [360, 70, 390, 100])
FOUR_FACE_LABELS = ("Happy", "Happy", "Happy", "Sad")
# every face called Happy: the Sad face is the single miss
FOUR_FACE_REPLY = "Person 1: Happy\nPerson 2: Happy\nPerson 3: Happy\nPerson 4: Happy"


def write_four_face_fixture(out_dir) -> Path:
    """Hand-checkable scoring fixture: one image, four faces, one wrong answer.

    Box areas strictly decrease in list order, so face ids follow it. The
    bundled ``reply.json`` mock script answers Happy for everyone, giving
    Acc 3/4 and R@1 mean(Happy 1.0, Sad 0.0) = 0.5.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(4)
    img = np.clip(120 + rng.integers(-4, 5, size=(200, 400, 3)), 0, 255).astype(np.uint8)
    faces = []
    for box, label in zip(FOUR_FACE_BOXES, FOUR_FACE_LABELS):
        lm = face_landmarks(box, label)
        draw_face(img, box, lm)
        faces.append({"box": [float(v) for v in box], "gt_emotion": label, "landmarks": lm})
    encode_png(SovImage(img, []), out / "four_faces.png")
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"schema_version": 1, "entries": [
        {"image_path": "four_faces.png", "split_tag": "fixture", "faces": faces}]}, indent=1) + "\n")
    (out / "reply.json").write_text(json.dumps({".*": FOUR_FACE_REPLY}, indent=1) + "\n")
    return manifest
