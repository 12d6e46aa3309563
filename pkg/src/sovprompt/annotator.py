"""Draw numbered boxes and landmark dots over a whole image.

All drawing is done with integer numpy indexing on an RGB ``uint8`` raster so
output is bit-identical across platforms; PNG encoding goes through Pillow.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from ._font import text_mask
from .errors import ConfigError, FaceOutOfBounds, SovError
from .geometry import AnnotatedFace, BoundingBox

log = logging.getLogger(__name__)

RGB = Tuple[int, int, int]

DEFAULT_PALETTE: Tuple[RGB, ...] = (
    (255, 0, 0),      # red
    (0, 255, 0),      # lime
    (0, 0, 255),      # blue
    (255, 255, 0),    # yellow
    (0, 255, 255),    # cyan
    (255, 0, 255),    # magenta
    (255, 165, 0),    # orange
    (128, 0, 128),    # purple
    (255, 255, 255),  # white
    (0, 0, 0),        # black
)

# boxes may poke this many pixels past the border before being rejected
CLIP_TOLERANCE_PX = 2.0


@dataclass(frozen=True)
class RenderStyle:
    palette: Tuple[RGB, ...] = DEFAULT_PALETTE
    line_thickness_frac: float = 0.01
    label_scale_frac: float = 0.25
    landmark_radius_frac: float = 0.02
    draw_landmarks: bool = True
    draw_numbers: bool = True
    draw_boxes: bool = True

    def __post_init__(self):
        if not self.palette:
            raise ConfigError("palette must not be empty")
        for name in ("line_thickness_frac", "label_scale_frac", "landmark_radius_frac"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        object.__setattr__(self, "palette", tuple(tuple(int(c) for c in rgb) for rgb in self.palette))

    @classmethod
    def for_arm(cls, arm: str, **overrides) -> "RenderStyle":
        """Style for one visual-prompt ablation arm."""
        flags = {
            "baseline": (False, False, False),
            "box": (True, False, False),
            "box+number": (True, True, False),
            "sov": (True, True, True),
        }
        try:
            boxes, numbers, marks = flags[arm]
        except KeyError:
            raise ConfigError(f"unknown arm {arm!r}; choose from {sorted(flags)}") from None
        return cls(draw_boxes=boxes, draw_numbers=numbers, draw_landmarks=marks, **overrides)

    def to_dict(self) -> dict:
        return {
            "palette": [list(c) for c in self.palette],
            "line_thickness_frac": self.line_thickness_frac,
            "label_scale_frac": self.label_scale_frac,
            "landmark_radius_frac": self.landmark_radius_frac,
            "draw_landmarks": self.draw_landmarks,
            "draw_numbers": self.draw_numbers,
            "draw_boxes": self.draw_boxes,
        }


@dataclass
class SovImage:
    pixels: np.ndarray
    faces: List[AnnotatedFace]
    style: RenderStyle = field(default_factory=RenderStyle)
    source_digest: str = ""

    @property
    def size(self) -> Tuple[int, int]:
        h, w = self.pixels.shape[:2]
        return w, h

    @property
    def face_ids(self) -> List[int]:
        return [f.id for f in self.faces]

    def digest(self) -> str:
        return raster_digest(self.pixels)


def raster_digest(pixels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(repr(tuple(pixels.shape)).encode())
    h.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return h.hexdigest()


def _px(v: float) -> int:
    # round half up; np.rint would round half to even
    return int(math.floor(v + 0.5))


def stroke_width(box: BoundingBox, style: RenderStyle) -> int:
    return max(2, _px(style.line_thickness_frac * box.diagonal))


def label_height(box: BoundingBox, style: RenderStyle) -> int:
    return min(48, max(12, _px(style.label_scale_frac * box.height)))


def landmark_radius(box: BoundingBox, style: RenderStyle) -> int:
    return max(2, _px(style.landmark_radius_frac * box.diagonal))


def pixel_rect(box: BoundingBox, width: int, height: int) -> Tuple[int, int, int, int]:
    """Half-open integer pixel rectangle ``(x0, y0, x1, y1)`` clipped to the image."""
    x0 = min(max(_px(box.x_min), 0), width - 1)
    y0 = min(max(_px(box.y_min), 0), height - 1)
    x1 = min(max(_px(box.x_max), x0 + 1), width)
    y1 = min(max(_px(box.y_max), y0 + 1), height)
    return x0, y0, x1, y1


def _check_bounds(face: AnnotatedFace, width: int, height: int) -> None:
    over = max(face.box.x_max - width, face.box.y_max - height)
    if over > CLIP_TOLERANCE_PX:
        raise FaceOutOfBounds(
            f"face {face.id} box {face.box.as_list()} exceeds {width}x{height} image by {over:.1f}px"
        )
    if over > 0:
        log.warning("face %d box clipped to image bounds (%.2fpx over)", face.id, over)


def _draw_ring(img: np.ndarray, rect, t: int, color) -> None:
    x0, y0, x1, y1 = rect
    img[y0:min(y0 + t, y1), x0:x1] = color
    img[max(y1 - t, y0):y1, x0:x1] = color
    img[y0:y1, x0:min(x0 + t, x1)] = color
    img[y0:y1, max(x1 - t, x0):x1] = color


def _draw_disk(img: np.ndarray, cx: float, cy: float, r: int, color) -> None:
    h, w = img.shape[:2]
    icx, icy = _px(cx), _px(cy)
    ys0, ys1 = max(icy - r, 0), min(icy + r + 1, h)
    xs0, xs1 = max(icx - r, 0), min(icx + r + 1, w)
    if ys0 >= ys1 or xs0 >= xs1:
        return
    yy, xx = np.mgrid[ys0:ys1, xs0:xs1]
    mask = (yy - icy) ** 2 + (xx - icx) ** 2 <= r * r
    img[ys0:ys1, xs0:xs1][mask] = color


def _draw_label(img: np.ndarray, text: str, rect, digit_h: int, color) -> None:
    h, w = img.shape[:2]
    glyphs = text_mask(text, digit_h)
    pad = max(1, digit_h // 6)
    lh, lw = digit_h + 2 * pad, glyphs.shape[1] + 2 * pad
    x0, y0 = rect[0], rect[1]
    ly = y0 - lh
    if ly < 0:
        ly = y0  # no room above: tuck inside the top edge
    ly = max(0, min(ly, h - lh))
    lx = max(0, min(x0, w - lw))

    patch = np.empty((lh, lw, 3), dtype=np.uint8)
    patch[:] = color
    r, g, b = color
    ink = (0, 0, 0) if 0.299 * r + 0.587 * g + 0.114 * b > 128 else (255, 255, 255)
    patch[pad:pad + digit_h, pad:pad + glyphs.shape[1]][glyphs] = ink

    ph, pw = min(lh, h - ly), min(lw, w - lx)
    img[ly:ly + ph, lx:lx + pw] = patch[:ph, :pw]


def render(image: np.ndarray, faces: Sequence[AnnotatedFace],
           style: RenderStyle = RenderStyle()) -> SovImage:
    """Overlay the set-of-vision marks for ``faces`` onto a copy of ``image``.

    Face ``k`` uses ``palette[(k - 1) % len(palette)]``. Boxes go down first,
    then landmark dots, then number labels, so labels are never covered.
    Pixels outside the drawn marks are copied unchanged.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise SovError(f"expected an HxWx3 uint8 raster, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    faces = list(faces)
    for f in faces:
        _check_bounds(f, w, h)

    out = image.copy()
    color = {f.id: style.palette[(f.id - 1) % len(style.palette)] for f in faces}

    if style.draw_boxes:
        for f in faces:
            _draw_ring(out, pixel_rect(f.box, w, h), stroke_width(f.box, style), color[f.id])

    if style.draw_landmarks:
        for f in faces:
            if f.landmarks is None:
                continue
            r = landmark_radius(f.box, style)
            c = color[f.id]
            dark = tuple(v // 2 for v in c)
            for x, y in f.landmarks.points:
                _draw_disk(out, x, y, r + 1, dark)
                _draw_disk(out, x, y, r, c)

    if style.draw_numbers:
        for f in faces:
            _draw_label(out, str(f.id), pixel_rect(f.box, w, h),
                        label_height(f.box, style), color[f.id])

    return SovImage(out, faces, style, raster_digest(image))


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as e:
        raise SovError(f"cannot read image {path}: {e}") from e


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def png_bytes(pixels: np.ndarray) -> bytes:
    import io
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), "RGB").save(
        buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def encode_png(image: SovImage, path) -> Path:
    path = Path(path)
    try:
        atomic_write_bytes(path, png_bytes(image.pixels))
    except OSError as e:
        raise SovError(f"cannot write PNG to {path}: {e}") from e
    return path


def decode_png(path) -> np.ndarray:
    return load_image(path)


def default_output_path(image_path, suffix: str = ".sov.png", out_dir=None) -> Path:
    p = Path(image_path)
    base = Path(out_dir) if out_dir is not None else p.parent
    return base / f"{p.stem}{suffix}"
