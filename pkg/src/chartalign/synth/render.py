"""Deterministic from-scratch chart rasterizer.

Everything is drawn into a uint8 canvas with integer geometry; the layout is
computed first and exposed so tests and the grounding tasks can query where
each element landed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from chartalign.errors import ConfigurationError, InputError
from chartalign.synth import font
from chartalign.synth.spec import PALETTE, ChartSpec, format_number, pie_slice_colors, validate_spec

DEFAULT_PATCH_SIZE = 32
SUPPORTED_RESOLUTIONS = (336, 384, 448)
BACKGROUND = (255, 255, 255)
INK = (0, 0, 0)
NUM_TICKS = 5
AXIS_HEADROOM = 1.1


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def normalized(self, resolution: int) -> tuple[float, float, float, float]:
        r = float(resolution)
        return (self.x0 / r, self.y0 / r, self.x1 / r, self.y1 / r)


@dataclass
class Layout:
    resolution: int
    plot: Rect
    value_range: tuple[float, float] = (0.0, 1.0)
    ticks: list[tuple[float, int]] = field(default_factory=list)
    # (series index, category index) -> rectangle of the mark (bars, line markers)
    marks: dict[tuple[int, int], Rect] = field(default_factory=dict)
    # line charts: (series index, category index) -> pixel centre
    points: dict[tuple[int, int], tuple[int, int]] = field(default_factory=dict)
    # pie charts
    pie_center: tuple[float, float] | None = None
    pie_radius: float = 0.0
    wedge_angles: list[tuple[float, float]] = field(default_factory=list)
    title_rect: Rect | None = None
    legend_rects: list[Rect] = field(default_factory=list)
    label_anchors: list[tuple[int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class ChartImage:
    pixels: np.ndarray  # float32 [H, W, 3] in [0, 1]
    resolution: int
    spec_ref: str

    def __post_init__(self):
        if self.pixels.shape != (self.resolution, self.resolution, 3):
            raise InputError(
                f"pixels shape {self.pixels.shape} does not match resolution {self.resolution}"
            )

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.pixels).tobytes()).hexdigest()


def check_resolution(resolution: int, patch_size: int = DEFAULT_PATCH_SIZE) -> None:
    if resolution <= 0 or patch_size <= 0 or resolution % patch_size:
        raise ConfigurationError(
            f"resolution {resolution} is not divisible by patch size {patch_size}"
        )


def _value_range(spec: ChartSpec) -> tuple[float, float]:
    vals = [v for s in spec.series for v in s.values]
    hi = AXIS_HEADROOM * max(max(vals), 0.0)
    lo = AXIS_HEADROOM * min(min(vals), 0.0)
    if hi == lo:
        hi = lo + 1.0
    return lo, hi


def _text_scale(text: str, max_width: int, preferred: int) -> int:
    scale = preferred
    while scale > 1 and font.text_width(text, scale) > max_width:
        scale -= 1
    return scale


def title_scale(spec: ChartSpec, resolution: int) -> int:
    return _text_scale(spec.title, resolution - 8, 2 if resolution >= 256 else 1)


def compute_layout(spec: ChartSpec, resolution: int) -> Layout:
    """Pixel geometry of every chart element (pure function of its inputs)."""
    R = resolution
    top = int(round(0.03 * R))
    title_rect = None
    if spec.title:
        ts = title_scale(spec, R)
        tw, th = font.text_width(spec.title, ts), font.text_height(ts)
        ty = int(round(0.025 * R))
        tx = (R - tw) // 2
        title_rect = Rect(tx, ty, tx + tw, ty + th)
        top = ty + th + int(round(0.04 * R))
    if spec.legend_position == "top":
        top += int(round(0.06 * R))
    right = int(round(0.22 * R)) if spec.legend_position == "right" else int(round(0.04 * R))
    if spec.chart_type == "horizontal_bar":
        left, bottom = int(round(0.17 * R)), int(round(0.08 * R))
    elif spec.chart_type == "pie":
        left, bottom = int(round(0.04 * R)), int(round(0.04 * R))
    else:
        left, bottom = int(round(0.12 * R)), int(round(0.09 * R))
    plot = Rect(left, top, R - right, R - bottom)
    if plot.width < 8 or plot.height < 8:
        raise ConfigurationError(f"resolution {R} too small for chart layout")
    layout = Layout(resolution=R, plot=plot, title_rect=title_rect)

    legend_items = _legend_items(spec)
    if spec.legend_position == "right":
        y = plot.y0
        x = plot.x1 + int(round(0.03 * R))
        for _ in legend_items:
            layout.legend_rects.append(Rect(x, y, x + 8, y + 8))
            y += 14
    elif spec.legend_position == "top":
        x = plot.x0
        y = top - int(round(0.05 * R))
        for name, _ in legend_items:
            layout.legend_rects.append(Rect(x, y, x + 8, y + 8))
            x += 8 + 4 + font.text_width(name) + 10

    n_cat = spec.num_categories
    n_ser = len(spec.series)
    if spec.chart_type == "pie":
        layout.pie_center = ((plot.x0 + plot.x1) / 2.0, (plot.y0 + plot.y1) / 2.0)
        layout.pie_radius = 0.45 * min(plot.width, plot.height)
        vals = spec.series[0].values
        total = float(sum(vals))
        acc = 0.0
        for v in vals:
            a0 = 2 * math.pi * acc / total
            acc += v
            layout.wedge_angles.append((a0, 2 * math.pi * acc / total))
        return layout

    lo, hi = _value_range(spec)
    layout.value_range = (lo, hi)
    horizontal = spec.chart_type == "horizontal_bar"
    extent = plot.width if horizontal else plot.height

    def to_px(v: float) -> int:
        offset = int(round((v - lo) / (hi - lo) * extent))
        return plot.x0 + offset if horizontal else plot.y1 - offset

    layout.ticks = [(lo + (hi - lo) * k / (NUM_TICKS - 1), 0) for k in range(NUM_TICKS)]
    layout.ticks = [(v, to_px(v)) for v, _ in layout.ticks]
    base = to_px(0.0)
    slot = (plot.height if horizontal else plot.width) / n_cat
    for j in range(n_cat):
        start = (plot.y0 if horizontal else plot.x0) + j * slot
        centre = int(round(start + slot / 2))
        layout.label_anchors.append((plot.x0, centre) if horizontal else (centre, plot.y1))
        if spec.chart_type == "line":
            for i, s in enumerate(spec.series):
                p = (centre, to_px(s.values[j]))
                layout.points[(i, j)] = p
                layout.marks[(i, j)] = Rect(p[0] - 2, p[1] - 2, p[0] + 3, p[1] + 3)
            continue
        group = 0.7 * slot
        bar = group / n_ser
        for i, s in enumerate(spec.series):
            a = int(round(start + 0.15 * slot + i * bar))
            b = int(round(start + 0.15 * slot + (i + 1) * bar))
            b = max(b, a + 1)
            end = to_px(s.values[j])
            if horizontal:
                x0, x1 = min(base, end), max(base, end)
                layout.marks[(i, j)] = Rect(x0, a, x1, b)
            else:
                y0, y1 = min(base, end), max(base, end)
                layout.marks[(i, j)] = Rect(a, y0, b, y1)
    return layout


def _legend_items(spec: ChartSpec) -> list[tuple[str, str]]:
    if spec.legend_position == "none":
        return []
    if spec.chart_type == "pie":
        return list(zip(spec.x_labels, pie_slice_colors(spec)))
    return [(s.series_name, s.color) for s in spec.series]


class _Canvas:
    def __init__(self, resolution: int):
        self.R = resolution
        self.a = np.empty((resolution, resolution, 3), dtype=np.uint8)
        self.a[:] = BACKGROUND

    def fill(self, r: Rect, color) -> None:
        x0, x1 = max(r.x0, 0), min(r.x1, self.R)
        y0, y1 = max(r.y0, 0), min(r.y1, self.R)
        if x0 < x1 and y0 < y1:
            self.a[y0:y1, x0:x1] = color

    def mask(self, m: np.ndarray, x: int, y: int, color) -> None:
        h, w = m.shape
        xs0, ys0 = max(x, 0), max(y, 0)
        xs1, ys1 = min(x + w, self.R), min(y + h, self.R)
        if xs0 >= xs1 or ys0 >= ys1:
            return
        sub = m[ys0 - y : ys1 - y, xs0 - x : xs1 - x]
        region = self.a[ys0:ys1, xs0:xs1]
        region[sub] = color

    def text(self, s: str, x: int, y: int, scale: int = 1, anchor: str = "lt") -> None:
        """Draw text; anchor is horizontal (l/c/r) + vertical (t/m/b)."""
        if not s:
            return
        w, h = font.text_width(s, scale), font.text_height(scale)
        if anchor[0] == "c":
            x -= w // 2
        elif anchor[0] == "r":
            x -= w
        if anchor[1] == "m":
            y -= h // 2
        elif anchor[1] == "b":
            y -= h
        self.mask(font.text_mask(s, scale), x, y, INK)

    def line(self, p0, p1, color, width: int = 2) -> None:
        (x0, y0), (x1, y1) = p0, p1
        n = max(abs(x1 - x0), abs(y1 - y0), 1)
        t = np.linspace(0.0, 1.0, 2 * n + 1)
        xs = np.rint(x0 + (x1 - x0) * t).astype(int)
        ys = np.rint(y0 + (y1 - y0) * t).astype(int)
        off = width // 2
        for dx in range(-off, width - off):
            for dy in range(-off, width - off):
                xx, yy = xs + dx, ys + dy
                ok = (xx >= 0) & (xx < self.R) & (yy >= 0) & (yy < self.R)
                self.a[yy[ok], xx[ok]] = color


def wedge_masks(layout: Layout) -> list[np.ndarray]:
    """Boolean pixel mask of each pie wedge (angle 0 at 12 o'clock, clockwise)."""
    R = layout.resolution
    cx, cy = layout.pie_center
    yy, xx = np.mgrid[0:R, 0:R]
    dx = xx + 0.5 - cx
    dy = yy + 0.5 - cy
    inside = dx * dx + dy * dy <= layout.pie_radius ** 2
    theta = np.mod(np.arctan2(dx, -dy), 2 * math.pi)
    masks = []
    for a0, a1 in layout.wedge_angles:
        masks.append(inside & (theta >= a0) & (theta < a1))
    return masks


def render(spec: ChartSpec, resolution: int, patch_size: int = DEFAULT_PATCH_SIZE) -> ChartImage:
    """Rasterize ``spec`` into an RGB image of side ``resolution``."""
    check_resolution(resolution, patch_size)
    validate_spec(spec)
    layout = compute_layout(spec, resolution)
    cv = _Canvas(resolution)
    plot = layout.plot

    if layout.title_rect is not None:
        cv.text(spec.title, layout.title_rect.x0, layout.title_rect.y0, title_scale(spec, resolution))

    items = _legend_items(spec)
    for (name, color), sw in zip(items, layout.legend_rects):
        cv.fill(sw, PALETTE[color])
        cv.text(name, sw.x1 + 4, sw.y0 + 4, 1, "lm")

    if spec.chart_type == "pie":
        _draw_pie(cv, spec, layout)
    else:
        _draw_axes(cv, spec, layout)
        if spec.chart_type == "line":
            _draw_lines(cv, spec, layout)
        else:
            _draw_bars(cv, spec, layout)

    pixels = cv.a.astype(np.float32) / np.float32(255.0)
    return ChartImage(pixels=pixels, resolution=resolution, spec_ref=spec.chart_id)


def _draw_axes(cv: _Canvas, spec: ChartSpec, layout: Layout) -> None:
    plot = layout.plot
    horizontal = spec.chart_type == "horizontal_bar"
    cv.fill(Rect(plot.x0 - 1, plot.y0, plot.x0, plot.y1 + 1), INK)
    cv.fill(Rect(plot.x0 - 1, plot.y1, plot.x1, plot.y1 + 1), INK)
    for v, px in layout.ticks:
        label = format_number(v)
        if horizontal:
            cv.fill(Rect(px, plot.y1 + 1, px + 1, plot.y1 + 4), INK)
            cv.text(label, px, plot.y1 + 6, 1, "ct")
        else:
            cv.fill(Rect(plot.x0 - 4, px, plot.x0 - 1, px + 1), INK)
            cv.text(label, plot.x0 - 6, px, 1, "rm")
    for label, (ax, ay) in zip(spec.x_labels, layout.label_anchors):
        if horizontal:
            cv.text(label, ax - 6, ay, 1, "rm")
        else:
            cv.text(label, ax, ay + 6, 1, "ct")


def _draw_bars(cv: _Canvas, spec: ChartSpec, layout: Layout) -> None:
    horizontal = spec.chart_type == "horizontal_bar"
    for (i, j), r in sorted(layout.marks.items()):
        cv.fill(r, PALETTE[spec.series[i].color])
    if not spec.annotate_values:
        return
    for (i, j), r in sorted(layout.marks.items()):
        v = spec.series[i].values[j]
        label = format_number(v)
        if horizontal:
            x = r.x1 + 3 if v >= 0 else r.x0 - 3
            cv.text(label, x, (r.y0 + r.y1) // 2, 1, "lm" if v >= 0 else "rm")
        else:
            cx = (r.x0 + r.x1) // 2
            if v >= 0:
                cv.text(label, cx, r.y0 - 2, 1, "cb")
            else:
                cv.text(label, cx, r.y1 + 2, 1, "ct")


def _draw_lines(cv: _Canvas, spec: ChartSpec, layout: Layout) -> None:
    n_cat = spec.num_categories
    for i, s in enumerate(spec.series):
        color = PALETTE[s.color]
        pts = [layout.points[(i, j)] for j in range(n_cat)]
        for p0, p1 in zip(pts, pts[1:]):
            cv.line(p0, p1, color)
        for j in range(n_cat):
            cv.fill(layout.marks[(i, j)], color)
    if not spec.annotate_values:
        return
    for i, s in enumerate(spec.series):
        for j in range(n_cat):
            x, y = layout.points[(i, j)]
            cv.text(format_number(s.values[j]), x, y - 5, 1, "cb")


def _draw_pie(cv: _Canvas, spec: ChartSpec, layout: Layout) -> None:
    colors = pie_slice_colors(spec)
    cx, cy = layout.pie_center
    r = layout.pie_radius
    for m, c in zip(wedge_masks(layout), colors):
        cv.a[m] = PALETTE[c]
    for j, (a0, a1) in enumerate(layout.wedge_angles):
        mid = (a0 + a1) / 2
        if spec.legend_position == "none":
            lx = int(round(cx + 1.1 * r * math.sin(mid)))
            ly = int(round(cy - 1.1 * r * math.cos(mid)))
            cv.text(spec.x_labels[j], lx, ly, 1, "cm")
        if spec.annotate_values:
            vx = int(round(cx + 0.65 * r * math.sin(mid)))
            vy = int(round(cy - 0.65 * r * math.cos(mid)))
            cv.text(format_number(spec.series[0].values[j]), vx, vy, 1, "cm")


def element_box(spec: ChartSpec, layout: Layout, series_idx: int, cat_idx: int) -> Rect:
    """Pixel bounding box of one data mark (bar, pie wedge, or a line series' span)."""
    if spec.chart_type == "pie":
        m = wedge_masks(layout)[cat_idx]
        ys, xs = np.nonzero(m)
        return Rect(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    if spec.chart_type == "line":
        rects = [layout.marks[(series_idx, j)] for j in range(spec.num_categories)]
        return Rect(min(r.x0 for r in rects), min(r.y0 for r in rects),
                    max(r.x1 for r in rects), max(r.y1 for r in rects))
    return layout.marks[(series_idx, cat_idx)]


def ink_mask(image: ChartImage | np.ndarray) -> np.ndarray:
    """Pixels drawn in the text/axis ink colour."""
    a = image.to_uint8() if isinstance(image, ChartImage) else image
    return np.all(a == np.array(INK, dtype=np.uint8), axis=-1)


def numeral_hits_in_plot(spec: ChartSpec, image: ChartImage) -> list[tuple[str, int, int]]:
    """Exact digit-glyph matches inside the plotting area (OCR-free scan)."""
    layout = compute_layout(spec, image.resolution)
    p = layout.plot
    ink = ink_mask(image)[p.y0 : p.y1, p.x0 : p.x1]
    return font.find_glyphs(ink, font.DIGITS, 1)


def save_png(image: ChartImage, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(image.to_uint8(), mode="RGB").save(path, format="PNG")


def load_png(path: str | Path, resolution: int | None = None, spec_ref: str | None = None) -> ChartImage:
    """Decode a PNG to a ChartImage, resizing to ``resolution`` when given."""
    from PIL import Image

    path = Path(path)
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.width != im.height and resolution is None:
                raise InputError(f"{path}: image is not square ({im.width}x{im.height})")
            if resolution is not None and im.size != (resolution, resolution):
                im = im.resize((resolution, resolution), Image.BILINEAR)
            a = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise InputError(f"{path}: cannot decode image: {exc}") from exc
    pixels = a.astype(np.float32) / np.float32(255.0)
    return ChartImage(pixels=pixels, resolution=a.shape[0], spec_ref=spec_ref or path.stem)
