"""Relaxed-accuracy evaluation, per-category reports and ablation tables."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Sequence

import torch

from chartalign.chart2text import ORACLE
from chartalign.dataset_io import ChartStore, DatasetManifest, chart_id_of
from chartalign.errors import ConfigurationError
from chartalign.language_model import generate_ids, layout_ids
from chartalign.model import Checkpoint, ModelConfig, init_checkpoint
from chartalign.synth.qa import CATEGORIES, QARecord, Stage1Example
from chartalign.tokenizer import Tokenizer
from chartalign.trainer import FeatureCache, TrainConfig, table_tokens, train_stage1, train_stage2

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 0.05
NORMALIZATION_NOTE = ("answers compared after trim, case-fold, whitespace collapse and stripping a "
                      "trailing % present on both sides; punctuation is kept")

_NUMBER_RE = re.compile(r"[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|[+-]?\.\d+")
_WS_RE = re.compile(r"\s+")


def parse_number(s: str) -> Decimal | None:
    """Decimal value of ``s`` or None.

    Accepts an optional sign, decimals, thousands-separator commas and one
    trailing ``%`` (which is dropped, not divided out).
    """
    t = s.strip()
    if t.endswith("%"):
        t = t[:-1].rstrip()
    if not _NUMBER_RE.fullmatch(t):
        return None
    try:
        return Decimal(t.replace(",", ""))
    except InvalidOperation:
        return None


def normalize_answer(s: str) -> str:
    return _WS_RE.sub(" ", s.strip()).casefold()


def relaxed_match(predicted: str, gold: str, tolerance: float = DEFAULT_TOLERANCE) -> bool:
    """Numeric answers within ``tolerance`` relative to gold, others exact after normalization."""
    p, g = parse_number(predicted), parse_number(gold)
    if p is not None and g is not None:
        if g == 0:
            return p == 0
        return abs(p - g) <= Decimal(str(tolerance)) * abs(g)
    a, b = normalize_answer(predicted), normalize_answer(gold)
    if a.endswith("%") and b.endswith("%"):
        a, b = a[:-1].rstrip(), b[:-1].rstrip()
    return a == b


# --- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class EvalOptions:
    use_chart_to_text: bool | None = None  # None: follow the checkpoint's stage-2 setting
    engine: str = ORACLE
    tolerance: float = DEFAULT_TOLERANCE
    batch_size: int = 16
    max_answer_len: int = 24

    def resolve(self, ckpt: Checkpoint) -> "EvalOptions":
        if self.use_chart_to_text is not None:
            return self
        stages = [s for s in ckpt.stage_meta.get("stages", []) if s["stage"] == "reasoning"]
        use = stages[-1]["use_chart_to_text"] if stages else True
        return replace(self, use_chart_to_text=use)

    def to_dict(self) -> dict:
        return {"use_chart_to_text": self.use_chart_to_text, "engine": self.engine,
                "tolerance": self.tolerance, "batch_size": self.batch_size,
                "max_answer_len": self.max_answer_len}


@dataclass(frozen=True)
class ExampleOutcome:
    image_ref: str
    question: str
    gold: str
    predicted: str
    correct: bool
    category: str
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"image_ref": self.image_ref, "question": self.question, "gold": self.gold,
             "predicted": self.predicted, "correct": self.correct, "category": self.category}
        if self.error is not None:
            d["error"] = self.error
        return d


@dataclass
class EvalReport:
    dataset: str
    outcomes: list[ExampleOutcome]
    config: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.outcomes)

    @property
    def correct(self) -> int:
        return sum(o.correct for o in self.outcomes)

    @property
    def accuracy_fraction(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)

    @property
    def accuracy(self) -> float:
        return float(self.accuracy_fraction)

    def category_fractions(self) -> dict[str, tuple[int, Fraction]]:
        out: dict[str, list[int]] = {}
        for o in self.outcomes:
            c = out.setdefault(o.category, [0, 0])
            c[0] += 1
            c[1] += o.correct
        order = [c for c in CATEGORIES if c in out] + sorted(c for c in out if c not in CATEGORIES)
        return {c: (out[c][0], Fraction(out[c][1], out[c][0])) for c in order}

    @property
    def per_category(self) -> dict[str, tuple[int, float]]:
        return {c: (n, float(a)) for c, (n, a) in self.category_fractions().items()}

    @property
    def errors(self) -> list[ExampleOutcome]:
        return [o for o in self.outcomes if o.error is not None]

    def to_dict(self, with_hash: bool = True) -> dict:
        d = {
            "dataset": self.dataset,
            "overall_accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "per_category": {c: {"count": n, "accuracy": a} for c, (n, a) in self.per_category.items()},
            "outcomes": [o.to_dict() for o in self.outcomes],
            "config": self.config,
        }
        if with_hash:
            d["content_hash"] = self.content_hash
        return d

    @property
    def content_hash(self) -> str:
        body = json.dumps(self.to_dict(with_hash=False), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(body.encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def render_table(self) -> str:
        cats = list(self.per_category)
        head = ["Dataset"] + [c.capitalize() for c in cats] + ["Overall"]
        row = [self.dataset] + [f"{100 * a:.2f}" for _, a in self.per_category.values()] + [f"{100 * self.accuracy:.2f}"]
        counts = ["count"] + [str(n) for n, _ in self.per_category.values()] + [str(self.total)]
        return _table([head, row, counts])


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


@torch.no_grad()
def predict_answers(ckpt: Checkpoint, records: Sequence[QARecord], store: ChartStore,
                    options: EvalOptions) -> list[tuple[str, str | None]]:
    """(prediction, error) per record, in order."""
    options = options.resolve(ckpt)
    model, tok = ckpt.model, ckpt.tokenizer
    model.eval()
    res = ckpt.config.resolution
    cache = FeatureCache(model, store, res)
    M = model.connector.output_rows((res // ckpt.config.vision.patch_size) ** 2)
    results: list[tuple[str, str | None]] = [("", None)] * len(records)
    prompts: list[tuple[int, list[int]]] = []
    tables: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        try:
            if r.image_ref not in tables:
                tables[r.image_ref] = table_tokens(r.image_ref, store, tok, options.use_chart_to_text,
                                                   options.engine, res)
            prompt, _ = layout_ids(M, tables[r.image_ref], tok.tokenize(r.question), None)
            if len(prompt) >= ckpt.config.lm.max_len:
                raise ValueError(f"prompt of {len(prompt)} positions exceeds LM max_len")
            cache.features([r.image_ref])
        except Exception as exc:  # recorded per example; the run continues
            results[i] = ("", f"{type(exc).__name__}: {exc}")
            continue
        prompts.append((i, prompt))
    for k in range(0, len(prompts), options.batch_size):
        chunk = prompts[k : k + options.batch_size]
        feats = cache.features([records[i].image_ref for i, _ in chunk])
        rows = model.connector(feats)
        outs = generate_ids([p for _, p in chunk], rows, model.lm, options.max_answer_len)
        for (i, _), ids in zip(chunk, outs):
            results[i] = (tok.detokenize(ids, skip_special=True), None)
    return results


def evaluate(model: Checkpoint, manifest: DatasetManifest, options: EvalOptions | None = None,
             store: ChartStore | None = None) -> EvalReport:
    """Relaxed accuracy of ``model`` on ``manifest``, per category and overall."""
    options = (options or EvalOptions()).resolve(model)
    if store is None:
        store = ChartStore(manifest.image_root)
    preds = predict_answers(model, manifest.records, store, options)
    outcomes = []
    for r, (pred, err) in zip(manifest.records, preds):
        ok = err is None and relaxed_match(pred, r.gold_answer, options.tolerance)
        outcomes.append(ExampleOutcome(r.image_ref, r.question, r.gold_answer, pred, ok, r.category, err))
    config = {
        "options": options.to_dict(),
        "checkpoint_digests": model.digests(),
        "checkpoint_stages": model.completed_stages(),
        "model_config": model.config.to_dict(),
        "normalization": NORMALIZATION_NOTE,
    }
    return EvalReport(manifest.name, outcomes, config)


# --- ablations -----------------------------------------------------------------

AXES = ("base", "chart2text_off", "chart2text_off_train", "chart2text_off_test",
        "connector_mlp", "resolution_384")
AXIS_LABELS = {
    "base": "base",
    "chart2text_off": "w/o chart-to-text (train; test)",
    "chart2text_off_train": "w/o chart-to-text (train only)",
    "chart2text_off_test": "w/o chart-to-text (test only)",
    "connector_mlp": "cross-attention -> MLP",
    "resolution_384": "resolution -> 384",
}


@dataclass
class AblationBase:
    """Everything needed to train and evaluate one pipeline variant."""

    model_config: ModelConfig
    tokenizer: Tokenizer
    stage1_data: Sequence[Stage1Example]
    stage2_data: Sequence[QARecord]
    train_store: ChartStore
    stage1: TrainConfig
    stage2: TrainConfig
    init_seed: int = 0
    eval_options: EvalOptions = field(default_factory=EvalOptions)

    def variant(self, axis: str) -> tuple["AblationBase", bool, bool]:
        """(setup, chart-to-text at train, chart-to-text at test) for one axis."""
        if axis not in AXES:
            raise ConfigurationError(f"unknown ablation axis {axis!r}; choose from {AXES}")
        train_c2t = self.stage2.use_chart_to_text
        test_c2t = self.eval_options.use_chart_to_text
        test_c2t = train_c2t if test_c2t is None else test_c2t
        setup = self
        if axis == "chart2text_off":
            train_c2t = test_c2t = False
        elif axis == "chart2text_off_train":
            train_c2t = False
        elif axis == "chart2text_off_test":
            test_c2t = False
        elif axis == "connector_mlp":
            setup = replace(self, model_config=self.model_config.with_overrides(connector_mode="mlp"))
        elif axis == "resolution_384":
            vc = self.model_config.vision
            if vc.max_resolution < 384:
                raise ConfigurationError("resolution_384 needs a vision encoder with max_resolution >= 384")
            setup = replace(self, model_config=self.model_config.with_overrides(resolution=384))
        return setup, train_c2t, test_c2t


def run_pipeline(setup: AblationBase, use_chart_to_text_train: bool) -> Checkpoint:
    """Stage 1 then stage 2 from a fresh seeded initialization."""
    init = init_checkpoint(setup.model_config, setup.tokenizer, setup.init_seed)
    res = setup.model_config.resolution
    s1 = replace(setup.stage1, image_resolution=res, connector_mode=setup.model_config.connector.mode)
    s2 = replace(setup.stage2, image_resolution=res, connector_mode=setup.model_config.connector.mode,
                 use_chart_to_text=use_chart_to_text_train)
    ck = train_stage1(setup.stage1_data, s1, init, setup.train_store)
    return train_stage2(setup.stage2_data, s2, ck, setup.train_store)


@dataclass
class AblationRow:
    axis: str
    label: str
    report: EvalReport
    deltas: dict[str, float]  # percentage points vs base, per category plus "overall"


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def categories(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            seen += [c for c in r.report.per_category if c not in seen]
        return seen

    def to_dict(self) -> dict:
        return {"rows": [{"axis": r.axis, "label": r.label, "overall": r.report.accuracy,
                          "per_category": {c: a for c, (_, a) in r.report.per_category.items()},
                          "delta_pp": r.deltas, "report_hash": r.report.content_hash,
                          "config": r.report.config} for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self) -> str:
        cats = self.categories()
        head = ["Variant"]
        for c in cats + ["overall"]:
            head += [c.capitalize(), "Δ"]
        rows = [head]
        for r in self.rows:
            pc = r.report.per_category
            row = [r.label]
            for c in cats:
                row += [f"{100 * pc[c][1]:.2f}" if c in pc else "-", f"{r.deltas.get(c, 0.0):+.2f}"]
            row += [f"{100 * r.report.accuracy:.2f}", f"{r.deltas['overall']:+.2f}"]
            rows.append(row)
        return _table(rows)


def _deltas(report: EvalReport, base: EvalReport) -> dict[str, float]:
    out = {}
    bpc = base.category_fractions()
    for c, (_, a) in report.category_fractions().items():
        if c in bpc:
            out[c] = float(100 * (a - bpc[c][1]))
    out["overall"] = float(100 * (report.accuracy_fraction - base.accuracy_fraction))
    return out


def ablation_suite(base_config: AblationBase, axes: Sequence[str], manifest: DatasetManifest,
                   store: ChartStore | None = None) -> AblationTable:
    """Train and evaluate the base pipeline and one variant per axis.

    The first row is always the base; requesting "base" again adds a second,
    identical run.
    """
    for a in axes:
        if a not in AXES:
            raise ConfigurationError(f"unknown ablation axis {a!r}; choose from {AXES}")
    store = store or ChartStore(manifest.image_root)
    trained: dict[tuple, Checkpoint] = {}
    rows: list[AblationRow] = []
    base_report = None
    for axis in ("base",) + tuple(axes):
        setup, train_c2t, test_c2t = base_config.variant(axis)
        key = (setup.model_config, train_c2t)
        if key not in trained:
            log.info("training variant %s", axis)
            trained[key] = run_pipeline(setup, train_c2t)
        opts = replace(setup.eval_options, use_chart_to_text=test_c2t)
        report = evaluate(trained[key], manifest, opts, store)
        report.config["ablation_axis"] = axis
        report.config["chart_to_text"] = {"train": train_c2t, "test": test_c2t}
        if base_report is None:
            base_report = report
        rows.append(AblationRow(axis, AXIS_LABELS[axis], report, _deltas(report, base_report)))
    return AblationTable(rows)
