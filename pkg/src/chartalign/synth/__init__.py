"""Synthetic chart corpus: specs, rasterizer, question templates."""

from chartalign.synth.spec import (
    CHART_TYPES,
    COLOR_NAMES,
    PALETTE,
    ChartSpec,
    GenConfig,
    Series,
    format_number,
    generate_spec,
    load_spec,
    save_spec,
    validate_spec,
)
from chartalign.synth.render import ChartImage, Rect, compute_layout, load_png, render, save_png
from chartalign.synth.qa import (
    CATEGORIES,
    STAGE1_TASKS,
    Corpus,
    QARecord,
    Stage1Example,
    generate_corpus,
    make_qa_pairs,
    make_stage1_examples,
)
