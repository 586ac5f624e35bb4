"""Question/answer templates and stage-1 task examples built from a ChartSpec.

Every gold answer is computed from the chart spec by the template that wrote the
question; nothing is read back from pixels.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numpy as np

from chartalign.synth.render import compute_layout, element_box
from chartalign.synth.spec import ChartSpec, GenConfig, format_number, generate_spec, pie_slice_colors

log = logging.getLogger(__name__)

CATEGORIES = ("color", "structure", "textless", "general")
STAGE1_TASKS = ("captioning", "caption_with_grounding", "grounded_captioning", "chart_to_text")
ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth")
TYPE_PHRASES = {
    "vertical_bar": "vertical bar chart",
    "horizontal_bar": "horizontal bar chart",
    "grouped_bar": "grouped bar chart",
    "line": "line chart",
    "pie": "pie chart",
}


@dataclass(frozen=True)
class QARecord:
    image_ref: str
    question: str
    gold_answer: str
    category: str

    def to_dict(self) -> dict:
        return {"image_ref": self.image_ref, "question": self.question,
                "gold_answer": self.gold_answer, "category": self.category}


@dataclass(frozen=True)
class Stage1Example:
    image_ref: str
    task: str
    prefix: str
    label: str

    def to_dict(self) -> dict:
        return asdict(self)


def _mark(spec: ChartSpec) -> str:
    return {"line": "line", "pie": "slice"}.get(spec.chart_type, "bar")


# --- templates ----------------------------------------------------------------
# A template returns (question, answer) or None when it does not apply.

Template = Callable[[ChartSpec, np.random.Generator], "tuple[str, str] | None"]


def _two_series(spec, rng):
    i, k = sorted(int(x) for x in rng.choice(len(spec.series), size=2, replace=False))
    return spec.series[i], spec.series[k]


def color_least_difference(spec, rng):
    if len(spec.series) < 2 or spec.chart_type == "pie":
        return None
    a, b = _two_series(spec, rng)
    m = _mark(spec)
    diff = min(abs(x - y) for x, y in zip(a.values, b.values))
    return (f"What is the least difference between the {a.color} {m} and the {b.color} {m}?",
            format_number(diff))


def color_greatest_difference(spec, rng):
    if len(spec.series) < 2 or spec.chart_type == "pie":
        return None
    a, b = _two_series(spec, rng)
    m = _mark(spec)
    diff = max(abs(x - y) for x, y in zip(a.values, b.values))
    return (f"What is the greatest difference between the {a.color} {m} and the {b.color} {m}?",
            format_number(diff))


def color_series_of_color(spec, rng):
    if len(spec.series) < 2:
        return None
    s = spec.series[int(rng.integers(len(spec.series)))]
    return f"Which series is shown in {s.color}?", s.series_name


def color_of_series(spec, rng):
    if len(spec.series) < 2:
        return None
    s = spec.series[int(rng.integers(len(spec.series)))]
    return f"What color represents {s.series_name}?", s.color


def structure_nth_in_group(spec, rng):
    if spec.chart_type != "grouped_bar":
        return None
    k = int(rng.integers(len(spec.series)))
    return (f"What is the label of the {ORDINALS[k]} bar from the left in each group?",
            spec.series[k].series_name)


def structure_nth_label(spec, rng):
    k = int(rng.integers(spec.num_categories))
    q = {
        "vertical_bar": f"What is the label of the {ORDINALS[k]} bar from the left?",
        "horizontal_bar": f"What is the label of the {ORDINALS[k]} bar from the top?",
        "grouped_bar": f"What is the label of the {ORDINALS[k]} group from the left?",
        "line": f"What is the {ORDINALS[k]} category on the x-axis?",
        "pie": f"Which category is the {ORDINALS[k]} slice clockwise from the top?",
    }[spec.chart_type]
    return q, spec.x_labels[k]


def structure_count_marks(spec, rng):
    if spec.chart_type == "pie":
        return "How many slices does the pie chart have?", format_number(spec.num_categories)
    if spec.chart_type == "line":
        return "How many categories are on the x-axis?", format_number(spec.num_categories)
    return "How many bars are there in total?", format_number(spec.num_categories * len(spec.series))


def structure_count_series(spec, rng):
    if len(spec.series) < 2 or spec.legend_position == "none":
        return None
    return "How many series are shown in the legend?", format_number(len(spec.series))


def structure_legend_position(spec, rng):
    if spec.legend_position == "none":
        return None
    return "Where is the legend placed?", spec.legend_position


def _pick_series(spec, rng):
    s = spec.series[int(rng.integers(len(spec.series)))]
    suffix = f" {s.series_name}" if len(spec.series) > 1 else ""
    return s, suffix


def _unique_extreme(values, fn):
    best = fn(values)
    idx = [j for j, v in enumerate(values) if v == best]
    return idx[0] if len(idx) == 1 else None


def textless_argmax(spec, rng):
    if spec.annotate_values:
        return None
    s, suffix = _pick_series(spec, rng)
    j = _unique_extreme(s.values, max)
    if j is None:
        return None
    return f"Which category has the highest{suffix} value?", spec.x_labels[j]


def textless_argmin(spec, rng):
    if spec.annotate_values:
        return None
    s, suffix = _pick_series(spec, rng)
    j = _unique_extreme(s.values, min)
    if j is None:
        return None
    return f"Which category has the lowest{suffix} value?", spec.x_labels[j]


def _value_question(spec, rng):
    s, _ = _pick_series(spec, rng)
    j = int(rng.integers(spec.num_categories))
    if len(spec.series) > 1:
        q = f"What is the value of {s.series_name} for {spec.x_labels[j]}?"
    else:
        q = f"What is the value for {spec.x_labels[j]}?"
    return q, format_number(s.values[j])


def textless_value(spec, rng):
    if spec.annotate_values:
        return None
    return _value_question(spec, rng)


def textless_compare(spec, rng):
    if spec.annotate_values:
        return None
    s, _ = _pick_series(spec, rng)
    a, b = (int(x) for x in rng.choice(spec.num_categories, size=2, replace=False))
    if s.values[a] == s.values[b]:
        return None
    la, lb = spec.x_labels[a], spec.x_labels[b]
    if len(spec.series) > 1:
        q = f"Is {s.series_name} in {la} greater than in {lb}?"
    else:
        q = f"Is the value for {la} greater than for {lb}?"
    return q, "Yes" if s.values[a] > s.values[b] else "No"


def general_value(spec, rng):
    if not spec.annotate_values:
        return None
    return _value_question(spec, rng)


def general_title(spec, rng):
    if not spec.title:
        return None
    return "What is the title of the chart?", spec.title


TEMPLATES: dict[str, tuple[tuple[str, Template], ...]] = {
    "color": (
        ("least_difference", color_least_difference),
        ("greatest_difference", color_greatest_difference),
        ("series_of_color", color_series_of_color),
        ("color_of_series", color_of_series),
    ),
    "structure": (
        ("nth_in_group", structure_nth_in_group),
        ("nth_label", structure_nth_label),
        ("count_marks", structure_count_marks),
        ("count_series", structure_count_series),
        ("legend_position", structure_legend_position),
    ),
    "textless": (
        ("argmax", textless_argmax),
        ("argmin", textless_argmin),
        ("value", textless_value),
        ("compare", textless_compare),
    ),
    "general": (
        ("value", general_value),
        ("title", general_title),
    ),
}


def spec_seed(spec: ChartSpec, salt: int = 0) -> int:
    h = hashlib.sha256(f"{spec.chart_id}:{salt}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def instantiable(spec: ChartSpec, category: str) -> bool:
    """Whether any template of ``category`` applies to ``spec``."""
    if category == "color":
        return len(spec.series) >= 2
    if category == "textless":
        return not spec.annotate_values
    if category in ("structure", "general"):
        return True
    raise ValueError(f"unknown category {category!r}")


def make_qa_pairs(
    spec: ChartSpec,
    categories: Iterable[str] = CATEGORIES,
    image_ref: str | None = None,
    seed: int = 0,
) -> list[QARecord]:
    """One QARecord per requested category that the chart spec can instantiate."""
    image_ref = image_ref or spec.chart_id
    rng = np.random.default_rng(spec_seed(spec, seed))
    out = []
    for cat in categories:
        if cat not in TEMPLATES:
            raise ValueError(f"unknown category {cat!r}")
        if not instantiable(spec, cat):
            log.debug("skipping %s question for %s: not instantiable", cat, spec.chart_id)
            continue
        order = rng.permutation(len(TEMPLATES[cat]))
        for t in order:
            name, fn = TEMPLATES[cat][int(t)]
            qa = fn(spec, rng)
            if qa is not None:
                out.append(QARecord(image_ref, qa[0], qa[1], cat))
                break
        else:
            log.debug("skipping %s question for %s: no template produced an answer", cat, spec.chart_id)
    return out


def instantiate(category: str, template: str, spec: ChartSpec, seed: int = 0) -> QARecord | None:
    """Run one named template (None when it does not apply)."""
    fn = dict(TEMPLATES[category])[template]
    qa = fn(spec, np.random.default_rng(seed))
    return None if qa is None else QARecord(spec.chart_id, qa[0], qa[1], category)


# --- stage 1 -----------------------------------------------------------------

def format_box(box: tuple[float, float, float, float]) -> str:
    x1, y1, x2, y2 = (min(max(round(v, 2), 0.0), 1.0) for v in box)
    if x2 <= x1:
        x1, x2 = (x1, x1 + 0.01) if x1 < 1.0 else (0.99, 1.0)
    if y2 <= y1:
        y1, y2 = (y1, y1 + 0.01) if y1 < 1.0 else (0.99, 1.0)
    return f"<box>{x1:.2f},{y1:.2f},{x2:.2f},{y2:.2f}</box>"


def prominent_element(spec: ChartSpec) -> tuple[int, int]:
    """(series, category) of the largest value; first in series-major order on ties."""
    best, arg = None, (0, 0)
    for i, s in enumerate(spec.series):
        for j, v in enumerate(s.values):
            if best is None or v > best:
                best, arg = v, (i, j)
    return arg


def describe_element(spec: ChartSpec, i: int, j: int) -> str:
    if spec.chart_type == "pie":
        return f"the {spec.x_labels[j]} slice"
    if spec.chart_type == "line":
        return f"the {spec.series[i].series_name} line"
    return f"the {spec.x_labels[j]} bar of {spec.series[i].series_name}"


def grounding_box(spec: ChartSpec, resolution: int = 448) -> tuple[str, str]:
    """Description and formatted box of the most prominent element."""
    i, j = prominent_element(spec)
    layout = compute_layout(spec, resolution)
    rect = element_box(spec, layout, i, j)
    return describe_element(spec, i, j), format_box(rect.normalized(resolution))


def caption(spec: ChartSpec) -> str:
    names = ", ".join(s.series_name for s in spec.series)
    title = f" titled {spec.title}" if spec.title else ""
    return f"A {TYPE_PHRASES[spec.chart_type]}{title} showing {names}."


def make_stage1_examples(spec: ChartSpec, image_ref: str | None = None,
                         resolution: int = 448) -> list[Stage1Example]:
    """One example per stage-1 task family."""
    from chartalign.chart2text import linearize  # chart2text imports this package

    ref = image_ref or spec.chart_id
    what, box = grounding_box(spec, resolution)
    return [
        Stage1Example(ref, "captioning", "Describe the chart.", caption(spec)),
        Stage1Example(ref, "caption_with_grounding",
                      "Describe the most prominent mark with its box.", f"{what} {box}"),
        Stage1Example(ref, "grounded_captioning", f"What is in the region {box}?", what),
        Stage1Example(ref, "chart_to_text", "Convert the chart to a table.", linearize(spec).text),
    ]


# --- corpus ------------------------------------------------------------------

@dataclass
class Corpus:
    specs: list[ChartSpec]
    records: list[QARecord]
    stage1: list[Stage1Example]


def generate_corpus(
    n_per_category: int,
    seed: int = 0,
    config: GenConfig | None = None,
    categories: Iterable[str] = CATEGORIES,
    max_charts: int | None = None,
    resolution: int = 448,
    image_ref: Callable[[ChartSpec], str] | None = None,
) -> Corpus:
    """Generate charts until every instantiable category has ``n_per_category`` records."""
    config = config or GenConfig()
    categories = tuple(categories)
    counts = {c: 0 for c in categories}
    max_charts = max_charts or 50 * max(n_per_category, 1) * len(categories) + 100
    specs, records, stage1 = [], [], []
    s = seed
    while any(counts[c] < n_per_category for c in categories) and s - seed < max_charts:
        spec = generate_spec(s, config)
        s += 1
        wanted = [c for c in categories if counts[c] < n_per_category]
        ref = image_ref(spec) if image_ref else spec.chart_id
        recs = make_qa_pairs(spec, wanted, image_ref=ref)
        if not recs:
            continue
        for r in recs:
            counts[r.category] += 1
        specs.append(spec)
        records.extend(recs)
        stage1.extend(make_stage1_examples(spec, ref, resolution))
    short = [c for c in categories if counts[c] < n_per_category]
    if short:
        log.warning("categories not fully instantiable under this config: %s", short)
    return Corpus(specs, records, stage1)
