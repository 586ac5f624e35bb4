"""Chart specifications: palette, types, validation, seeded generation and JSON I/O."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from chartalign.errors import ConfigurationError, ValidationError

CHART_TYPES = ("vertical_bar", "horizontal_bar", "grouped_bar", "line", "pie")
LEGEND_POSITIONS = ("top", "right", "none")

# Fixed named palette. Order matters: pie slice colours are drawn from it.
PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (214, 39, 40),
    "orange": (255, 127, 14),
    "yellow": (230, 200, 20),
    "light green": (152, 223, 138),
    "dark green": (0, 100, 0),
    "light blue": (158, 202, 225),
    "dark blue": (8, 48, 107),
    "purple": (128, 0, 128),
    "pink": (247, 129, 191),
    "brown": (140, 86, 75),
    "gray": (127, 127, 127),
    "teal": (0, 128, 128),
}
COLOR_NAMES = tuple(PALETTE)

LABEL_POOLS: dict[str, tuple[str, ...]] = {
    "Month": ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"),
    "Day": ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"),
    "Country": ("Chile", "Peru", "Kenya", "Spain", "Italy", "Japan", "Egypt", "Brazil",
                "Canada", "India", "Norway", "Ghana", "Nepal", "Cuba", "Fiji", "Oman"),
    "Fruit": ("Apple", "Banana", "Cherry", "Grape", "Lemon", "Mango", "Melon", "Peach",
              "Pear", "Plum"),
    "Sector": ("Retail", "Energy", "Health", "Media", "Travel", "Mining", "Banking", "Farming"),
}
# pools whose natural order should be kept (consecutive runs)
ORDERED_POOLS = ("Month", "Day")
SERIES_POOL = ("Sales", "Revenue", "Profit", "Costs", "Exports", "Imports", "Urban", "Rural",
               "Men", "Women", "Online", "Stores", "Budget", "Actual")
TOPIC_POOL = ("Sales", "Output", "Demand", "Visitors", "Spending", "Usage", "Growth", "Traffic")


def format_number(x: float) -> str:
    """Canonical numeric form: shortest decimal with at most 2 fractional digits."""
    if not math.isfinite(x):
        raise ValidationError(f"non-finite value {x!r}")
    s = f"{x:.2f}"
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


@dataclass(frozen=True)
class Series:
    series_name: str
    color: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class ChartSpec:
    chart_id: str
    chart_type: str
    title: str
    x_labels: tuple[str, ...]
    series: tuple[Series, ...]
    annotate_values: bool
    legend_position: str

    @property
    def textless(self) -> bool:
        return not self.annotate_values

    @property
    def num_categories(self) -> int:
        return len(self.x_labels)

    def to_dict(self) -> dict:
        return {
            "chart_id": self.chart_id,
            "chart_type": self.chart_type,
            "title": self.title,
            "x_labels": list(self.x_labels),
            "series": [
                {"series_name": s.series_name, "color": s.color, "values": list(s.values)}
                for s in self.series
            ],
            "annotate_values": self.annotate_values,
            "legend_position": self.legend_position,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChartSpec":
        try:
            spec = cls(
                chart_id=str(d["chart_id"]),
                chart_type=str(d["chart_type"]),
                title=str(d["title"]),
                x_labels=tuple(str(x) for x in d["x_labels"]),
                series=tuple(
                    Series(str(s["series_name"]), str(s["color"]), tuple(float(v) for v in s["values"]))
                    for s in d["series"]
                ),
                annotate_values=bool(d["annotate_values"]),
                legend_position=str(d["legend_position"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed chart spec: {exc}") from exc
        validate_spec(spec)
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def validate_spec(spec: ChartSpec) -> None:
    """Raise ValidationError if any ChartSpec invariant is violated."""
    if not spec.chart_id:
        raise ValidationError("chart_id must be non-empty")
    if spec.chart_type not in CHART_TYPES:
        raise ValidationError(f"unknown chart_type {spec.chart_type!r}")
    if spec.legend_position not in LEGEND_POSITIONS:
        raise ValidationError(f"unknown legend_position {spec.legend_position!r}")
    if not spec.series:
        raise ValidationError("spec has no series")
    if not spec.x_labels:
        raise ValidationError("spec has no x_labels")
    if spec.chart_type == "pie" and len(spec.series) != 1:
        raise ValidationError("pie charts carry exactly one series")
    colors = [s.color for s in spec.series]
    for c in colors:
        if c not in PALETTE:
            raise ValidationError(f"color {c!r} not in palette")
    if len(set(colors)) != len(colors):
        raise ValidationError("series colors must be distinct")
    for s in spec.series:
        if len(s.values) != len(spec.x_labels):
            raise ValidationError(
                f"series {s.series_name!r} has {len(s.values)} values for {len(spec.x_labels)} labels"
            )
        if not all(math.isfinite(v) for v in s.values):
            raise ValidationError(f"series {s.series_name!r} has non-finite values")
        if spec.chart_type == "pie" and not all(v > 0 for v in s.values):
            raise ValidationError("pie values must be strictly positive")


def pie_slice_colors(spec: ChartSpec) -> list[str]:
    """Slice colours for a pie: the series colour, then the palette in order."""
    first = spec.series[0].color
    rest = [c for c in COLOR_NAMES if c != first]
    cycle = [first] + rest
    return [cycle[i % len(cycle)] for i in range(spec.num_categories)]


@dataclass(frozen=True)
class GenConfig:
    """Bounds for seeded chart generation."""

    min_series: int = 1
    max_series: int = 4
    min_categories: int = 2
    max_categories: int = 8
    chart_types: tuple[str, ...] = CHART_TYPES
    textless_prob: float = 0.5
    id_prefix: str = "c"

    def __post_init__(self):
        if not (1 <= self.min_series <= self.max_series <= 4):
            raise ConfigurationError(
                f"series bounds must satisfy 1 <= min <= max <= 4, got {self.min_series}..{self.max_series}"
            )
        if not (2 <= self.min_categories <= self.max_categories <= 8):
            raise ConfigurationError(
                f"category bounds must satisfy 2 <= min <= max <= 8, got "
                f"{self.min_categories}..{self.max_categories}"
            )
        if not self.chart_types or any(t not in CHART_TYPES for t in self.chart_types):
            raise ConfigurationError(f"chart_types must be a non-empty subset of {CHART_TYPES}")
        if not 0.0 <= self.textless_prob <= 1.0:
            raise ConfigurationError("textless_prob must lie in [0, 1]")
        if not self._compatible_types():
            raise ConfigurationError("no allowed chart type fits the series bounds")

    def _series_range(self, chart_type: str) -> tuple[int, int]:
        lo, hi = self.min_series, self.max_series
        if chart_type in ("pie", "vertical_bar", "horizontal_bar"):
            lo, hi = max(lo, 1), min(hi, 1)
        elif chart_type == "grouped_bar":
            lo = max(lo, 2)
        return lo, hi

    def _compatible_types(self) -> list[str]:
        return [t for t in self.chart_types if self._series_range(t)[0] <= self._series_range(t)[1]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chart_types"] = list(self.chart_types)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "chart_types" in d:
            d["chart_types"] = tuple(d["chart_types"])
        return cls(**d)


def _pick_labels(rng: np.random.Generator, n: int) -> tuple[str, tuple[str, ...]]:
    dims = sorted(d for d, pool in LABEL_POOLS.items() if len(pool) >= n)
    dim = dims[int(rng.integers(len(dims)))]
    pool = LABEL_POOLS[dim]
    if dim in ORDERED_POOLS:
        start = int(rng.integers(len(pool) - n + 1))
        labels = pool[start : start + n]
    else:
        idx = rng.choice(len(pool), size=n, replace=False)
        labels = tuple(pool[int(i)] for i in idx)
    return dim, tuple(labels)


def _draw_values(rng: np.random.Generator, n: int, top: float, decimals: int) -> tuple[float, ...]:
    lo = max(top * 0.05, 1.0)
    vals = []
    for _ in range(n):
        v = round(float(rng.uniform(lo, top)), decimals)
        vals.append(v if v > 0 else 1.0)
    return tuple(vals)


def generate_spec(seed: int, config: GenConfig | None = None) -> ChartSpec:
    """Generate a valid ChartSpec; deterministic in ``(seed, config)``."""
    config = config or GenConfig()
    rng = np.random.default_rng(seed)
    types = config._compatible_types()
    chart_type = types[int(rng.integers(len(types)))]
    s_lo, s_hi = config._series_range(chart_type)
    n_series = int(rng.integers(s_lo, s_hi + 1))
    n_cat = int(rng.integers(config.min_categories, config.max_categories + 1))

    dim, labels = _pick_labels(rng, n_cat)
    topic = TOPIC_POOL[int(rng.integers(len(TOPIC_POOL)))]
    title = f"{topic} by {dim}"

    top = float(rng.choice([10.0, 50.0, 100.0]))
    decimals = int(rng.integers(2))
    name_idx = rng.choice(len(SERIES_POOL), size=n_series, replace=False)
    color_idx = rng.choice(len(COLOR_NAMES), size=n_series, replace=False)
    series = tuple(
        Series(
            SERIES_POOL[int(ni)],
            COLOR_NAMES[int(ci)],
            _draw_values(rng, len(labels), top, decimals),
        )
        for ni, ci in zip(name_idx, color_idx)
    )
    annotate = bool(rng.random() >= config.textless_prob)
    if chart_type == "pie" or n_series > 1:
        legend = ("top", "right")[int(rng.integers(2))]
    else:
        legend = "none"
    spec = ChartSpec(
        chart_id=f"{config.id_prefix}{seed:06d}",
        chart_type=chart_type,
        title=title,
        x_labels=labels,
        series=series,
        annotate_values=annotate,
        legend_position=legend,
    )
    validate_spec(spec)
    return spec


def save_spec(spec: ChartSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_json(), encoding="utf-8")


def load_spec(path: str | Path) -> ChartSpec:
    return ChartSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
