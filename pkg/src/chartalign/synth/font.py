"""Fixed 5x7 bitmap font.

The renderer draws every glyph from this atlas, so raster scans can look for
exact glyph masks (used by the textless-purity check).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
ADVANCE = 6  # glyph width plus one column of spacing

_ROWS: dict[str, str] = {
    "0": ".###. #...# #..## #.#.# ##..# #...# .###.",
    "1": "..#.. .##.. ..#.. ..#.. ..#.. ..#.. .###.",
    "2": ".###. #...# ....# ...#. ..#.. .#... #####",
    "3": "##### ...#. ..#.. ...#. ....# #...# .###.",
    "4": "...#. ..##. .#.#. #..#. ##### ...#. ...#.",
    "5": "##### #.... ####. ....# ....# #...# .###.",
    "6": "..##. .#... #.... ####. #...# #...# .###.",
    "7": "##### ....# ...#. ..#.. .#... .#... .#...",
    "8": ".###. #...# #...# .###. #...# #...# .###.",
    "9": ".###. #...# #...# .#### ....# ...#. .##..",
    "A": ".###. #...# #...# ##### #...# #...# #...#",
    "B": "####. #...# #...# ####. #...# #...# ####.",
    "C": ".###. #...# #.... #.... #.... #...# .###.",
    "D": "###.. #..#. #...# #...# #...# #..#. ###..",
    "E": "##### #.... #.... ####. #.... #.... #####",
    "F": "##### #.... #.... ####. #.... #.... #....",
    "G": ".###. #...# #.... #.### #...# #...# .####",
    "H": "#...# #...# #...# ##### #...# #...# #...#",
    "I": ".###. ..#.. ..#.. ..#.. ..#.. ..#.. .###.",
    "J": "..### ...#. ...#. ...#. ...#. #..#. .##..",
    "K": "#...# #..#. #.#.. ##... #.#.. #..#. #...#",
    "L": "#.... #.... #.... #.... #.... #.... #####",
    "M": "#...# ##.## #.#.# #.#.# #...# #...# #...#",
    "N": "#...# #...# ##..# #.#.# #..## #...# #...#",
    "O": ".###. #...# #...# #...# #...# #...# .###.",
    "P": "####. #...# #...# ####. #.... #.... #....",
    "Q": ".###. #...# #...# #...# #.#.# #..#. .##.#",
    "R": "####. #...# #...# ####. #.#.. #..#. #...#",
    "S": ".#### #.... #.... .###. ....# ....# ####.",
    "T": "##### ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
    "U": "#...# #...# #...# #...# #...# #...# .###.",
    "V": "#...# #...# #...# #...# #...# .#.#. ..#..",
    "W": "#...# #...# #...# #.#.# #.#.# #.#.# .#.#.",
    "X": "#...# #...# .#.#. ..#.. .#.#. #...# #...#",
    "Y": "#...# #...# .#.#. ..#.. ..#.. ..#.. ..#..",
    "Z": "##### ....# ...#. ..#.. .#... #.... #####",
    " ": "..... ..... ..... ..... ..... ..... .....",
    ".": "..... ..... ..... ..... ..... .##.. .##..",
    ",": "..... ..... ..... ..... .##.. ..#.. .#...",
    "-": "..... ..... ..... ##### ..... ..... .....",
    "%": "##... ##..# ...#. ..#.. .#... #..## ...##",
    ":": "..... .##.. .##.. ..... .##.. .##.. .....",
    "?": ".###. #...# ....# ...#. ..#.. ..... ..#..",
    "/": "..... ....# ...#. ..#.. .#... #.... .....",
    "(": "...#. ..#.. .#... .#... .#... ..#.. ...#.",
    ")": ".#... ..#.. ...#. ...#. ...#. ..#.. .#...",
    "&": ".##.. #..#. #.#.. .#... #.#.# #..#. .##.#",
    "'": "..#.. ..#.. .#... ..... ..... ..... .....",
    "+": "..... ..#.. ..#.. ##### ..#.. ..#.. .....",
}
# drawn for characters outside the atlas
_FALLBACK = "##### #...# #...# #...# #...# #...# #####"

DIGITS = "0123456789"


def _parse(rows: str) -> np.ndarray:
    return np.array([[c == "#" for c in row] for row in rows.split()], dtype=bool)


_ATLAS = {ch: _parse(rows) for ch, rows in _ROWS.items()}
_FALLBACK_MASK = _parse(_FALLBACK)


def glyph(ch: str) -> np.ndarray:
    """Boolean [7, 5] mask for ``ch`` (letters are drawn upper-case)."""
    return _ATLAS.get(ch.upper(), _FALLBACK_MASK)


@lru_cache(maxsize=None)
def scaled_glyph(ch: str, scale: int) -> np.ndarray:
    g = glyph(ch)
    return np.kron(g, np.ones((scale, scale), dtype=bool)).astype(bool)


def text_width(text: str, scale: int = 1) -> int:
    if not text:
        return 0
    return (len(text) * ADVANCE - 1) * scale


def text_height(scale: int = 1) -> int:
    return GLYPH_H * scale


def text_mask(text: str, scale: int = 1) -> np.ndarray:
    """Boolean mask of ``text`` set on one line."""
    out = np.zeros((text_height(scale), max(text_width(text, scale), 0)), dtype=bool)
    for i, ch in enumerate(text):
        x = i * ADVANCE * scale
        g = scaled_glyph(ch, scale)
        out[:, x : x + g.shape[1]] |= g
    return out


def find_glyphs(ink: np.ndarray, chars: str = DIGITS, scale: int = 1) -> list[tuple[str, int, int]]:
    """Locate exact occurrences of glyphs in a boolean ink mask.

    A hit requires the glyph's on-pixels to be inked and its off-pixels to be
    clear. Returns ``(char, row, col)`` for the top-left corner of each hit.
    """
    hits = []
    h, w = ink.shape
    for ch in chars:
        g = scaled_glyph(ch, scale)
        gh, gw = g.shape
        if h < gh or w < gw:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(ink, (gh, gw))
        match = np.all(windows == g, axis=(2, 3))
        for r, c in zip(*np.nonzero(match)):
            hits.append((ch, int(r), int(c)))
    return hits
