"""Embedded 5x7 digit glyphs, scaled nearest-neighbour at draw time."""
import numpy as np

GLYPH_W, GLYPH_H = 5, 7

_ROWS = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}

GLYPHS = {
    ch: np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    for ch, rows in _ROWS.items()
}


def text_mask(text: str, height: int) -> np.ndarray:
    """Boolean mask of ``text`` with glyphs scaled to ``height`` pixels.

    Glyphs are separated by one source column of spacing before scaling.
    """
    cols = []
    for i, ch in enumerate(text):
        if i:
            cols.append(np.zeros((GLYPH_H, 1), dtype=bool))
        cols.append(GLYPHS[ch])
    src = np.hstack(cols)
    width = max(1, int(round(src.shape[1] * height / GLYPH_H)))
    rows = np.arange(height) * GLYPH_H // height
    colsi = np.arange(width) * src.shape[1] // width
    return src[rows[:, None], colsi[None, :]]
