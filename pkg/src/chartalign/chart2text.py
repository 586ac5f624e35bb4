"""Chart-to-text engine: linearize a chart's data table into pipe-delimited rows.

Grammar (rows joined by a single newline, no trailing newline)::

    TITLE | <title>                      (omitted when the title is empty)
    category | <series 1> | <series 2> ...
    <label> | <v1> | <v2> ...            (one row per category)

When the chart prints no values (textless) the value cells are dropped and a
category row is just ``<label>``. The reference ``oracle`` engine reads the
ChartSpec; pixel-based engines can be plugged in by name.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from typing import Callable

from chartalign.errors import ConfigurationError, InputError, ValidationError
from chartalign.synth.render import ChartImage
from chartalign.synth.spec import ChartSpec, format_number

SEP = " | "
TITLE_KEY = "TITLE"
HEADER_KEY = "category"
ORACLE = "oracle"

NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


@dataclass(frozen=True)
class LinearizedTable:
    text: str
    has_values: bool


@dataclass(frozen=True)
class ParsedTable:
    title: str
    labels: tuple[str, ...]
    series_names: tuple[str, ...]
    values: tuple[tuple[str, ...], ...] | None  # per row, as printed


def _check_cell(cell: str) -> str:
    if "|" in cell or "\n" in cell:
        raise ValidationError(f"cell {cell!r} contains a separator")
    return cell


def linearize(spec: ChartSpec) -> LinearizedTable:
    """Oracle linearization of ``spec``; value cells only for annotated charts."""
    rows = []
    if spec.title:
        rows.append(f"{TITLE_KEY}{SEP}{_check_cell(spec.title)}")
    rows.append(SEP.join([HEADER_KEY] + [_check_cell(s.series_name) for s in spec.series]))
    for j, label in enumerate(spec.x_labels):
        cells = [_check_cell(label)]
        if spec.annotate_values:
            cells += [format_number(s.values[j]) for s in spec.series]
        rows.append(SEP.join(cells))
    return LinearizedTable("\n".join(rows), has_values=spec.annotate_values)


def parse_table(text: str) -> ParsedTable:
    """Parse grammar-conforming text; raises ValidationError otherwise."""
    if not text:
        raise ValidationError("empty table text")
    lines = text.split("\n")
    title = ""
    if lines[0].startswith(TITLE_KEY + SEP):
        title = lines[0][len(TITLE_KEY + SEP):]
        if not title:
            raise ValidationError("title row with empty title")
        lines = lines[1:]
    if not lines:
        raise ValidationError("missing header row")
    header = lines[0].split(SEP)
    if header[0] != HEADER_KEY or len(header) < 2 or any(not c for c in header):
        raise ValidationError(f"malformed header row {lines[0]!r}")
    series_names = tuple(header[1:])
    body = lines[1:]
    if not body:
        raise ValidationError("table has no category rows")
    rows = [line.split(SEP) for line in body]
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValidationError("category rows have inconsistent widths")
    width = widths.pop()
    if width not in (1, len(header)):
        raise ValidationError(
            f"category rows have {width} cells; expected 1 or {len(header)}"
        )
    for r in rows:
        if any(not c or "|" in c for c in r):
            raise ValidationError(f"malformed row {SEP.join(r)!r}")
    labels = tuple(r[0] for r in rows)
    values = None
    if width > 1:
        values = tuple(tuple(r[1:]) for r in rows)
        for row in values:
            for cell in row:
                if not NUMBER_RE.fullmatch(cell):
                    raise ValidationError(f"value cell {cell!r} is not numeric")
    return ParsedTable(title, labels, series_names, values)


def numeric_tokens(text: str) -> list[str]:
    return NUMBER_RE.findall(text)


# --- external engine registry -------------------------------------------------

EngineFn = Callable[[ChartImage], "str | LinearizedTable"]


@dataclass
class _Engine:
    fn: EngineFn
    thread_safe: bool
    lock: threading.Lock


_REGISTRY: dict[str, _Engine] = {}


def register_external_engine(name: str, engine: EngineFn, thread_safe: bool = False) -> None:
    """Register an image-to-table function under ``name``.

    Engines that are not ``thread_safe`` are called under a per-engine lock.
    """
    if not name or name == ORACLE:
        raise ConfigurationError(f"engine name {name!r} is reserved or empty")
    if name in _REGISTRY:
        raise ConfigurationError(f"engine {name!r} is already registered")
    _REGISTRY[name] = _Engine(engine, thread_safe, threading.Lock())


def unregister_external_engine(name: str) -> None:
    _REGISTRY.pop(name, None)


def get_engine(name: str) -> EngineFn:
    try:
        return _REGISTRY[name].fn
    except KeyError:
        raise ConfigurationError(f"no external engine registered as {name!r}") from None


def registered_engines() -> list[str]:
    return sorted(_REGISTRY)


def chart_to_text(
    source: ChartSpec | ChartImage,
    engine: str = ORACLE,
    spec_resolver: Callable[[str], ChartSpec] | None = None,
) -> LinearizedTable:
    """Convert a chart into a LinearizedTable.

    The oracle engine needs a ChartSpec, or a ChartImage whose ``spec_ref``
    ``spec_resolver`` can resolve. External engines receive the image.
    """
    if engine == ORACLE:
        if isinstance(source, ChartSpec):
            return linearize(source)
        if spec_resolver is None:
            raise InputError(f"cannot resolve spec_ref {source.spec_ref!r}: no resolver given")
        try:
            spec = spec_resolver(source.spec_ref)
        except (KeyError, FileNotFoundError) as exc:
            raise InputError(f"cannot resolve spec_ref {source.spec_ref!r}") from exc
        return linearize(spec)

    if engine not in _REGISTRY:
        raise ConfigurationError(f"no external engine registered as {engine!r}")
    if not isinstance(source, ChartImage):
        raise InputError(f"engine {engine!r} needs a ChartImage, got {type(source).__name__}")
    entry = _REGISTRY[engine]
    if entry.thread_safe:
        out = entry.fn(source)
    else:
        with entry.lock:
            out = entry.fn(source)
    text = out.text if isinstance(out, LinearizedTable) else out
    if not isinstance(text, str):
        raise ValidationError(f"engine {engine!r} returned {type(text).__name__}, not text")
    parsed = parse_table(text)
    return LinearizedTable(text, has_values=parsed.values is not None)
