"""Dataset loading and persistence.

External chart-QA files (ChartQA / PlotQA / FigureQA layouts) are mapped to
canonical QARecords through field tables in ``data/adapters.json``. The
canonical on-disk form is JSON-lines with the fields
``image_ref, question, gold_answer, category``.

A synthetic dataset directory looks like::

    dataset.json        generation settings
    manifest.jsonl      stage-2 QA records (image_ref = images/<chart_id>.png)
    stage1.jsonl        stage-1 task examples
    specs/<chart_id>.json
    images/<chart_id>.png
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from chartalign.errors import ConfigurationError, LoadError, ValidationError
from chartalign.synth.qa import CATEGORIES, Corpus, QARecord, Stage1Example
from chartalign.synth.render import ChartImage, load_png, render, save_png
from chartalign.synth.spec import ChartSpec, load_spec, save_spec

FORMATS = ("chartqa_json", "plotqa_json", "figureqa_json", "canonical_jsonl")
RECORD_FIELDS = ("image_ref", "question", "gold_answer", "category")


def adapter_table() -> dict:
    """Field-name mapping tables for the external formats."""
    text = resources.files("chartalign").joinpath("data/adapters.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[QARecord, ...]
    image_root: str

    def __post_init__(self):
        if not self.records:
            raise ValidationError(f"manifest {self.name!r} has no records")

    def image_path(self, record: QARecord) -> Path:
        return Path(self.image_root) / record.image_ref

    def validate_images(self) -> None:
        for i, r in enumerate(self.records):
            if not self.image_path(r).is_file():
                raise ValidationError(f"record {i}: image {r.image_ref!r} not found under {self.image_root}")

    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})


def _read_sidecar(path: str | Path, n: int) -> list[str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        if len(data) != n:
            raise LoadError(f"sidecar has {len(data)} categories for {n} records")
        cats = [str(c) for c in data]
    elif isinstance(data, dict):
        cats = ["general"] * n
        for k, v in data.items():
            i = int(k)
            if not 0 <= i < n:
                raise LoadError(f"sidecar index {i} out of range")
            cats[i] = str(v)
    else:
        raise LoadError("sidecar must be a JSON list or object")
    for i, c in enumerate(cats):
        if c not in CATEGORIES:
            raise LoadError(f"unknown category {c!r}", index=i, field="category")
    return cats


def _load_canonical(path: Path) -> list[QARecord]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"invalid JSON: {exc}", index=i) from exc
            for f in RECORD_FIELDS:
                if f not in d:
                    raise LoadError(f"missing required field {f!r}", index=i, field=f)
            if d["category"] not in CATEGORIES:
                raise LoadError(f"unknown category {d['category']!r}", index=i, field="category")
            records.append(QARecord(str(d["image_ref"]), str(d["question"]),
                                    str(d["gold_answer"]), str(d["category"])))
    return records


def _load_adapted(path: Path, fmt: str) -> list[QARecord]:
    table = adapter_table()[fmt]
    data = json.loads(path.read_text(encoding="utf-8"))
    key = table["records_key"]
    if key is not None:
        if not isinstance(data, dict) or key not in data:
            raise LoadError(f"{path}: expected an object with key {key!r}")
        data = data[key]
    if not isinstance(data, list):
        raise LoadError(f"{path}: expected a list of records")
    records = []
    for i, d in enumerate(data):
        vals = {}
        for role in ("question", "answer", "image"):
            f = table[role]
            if not isinstance(d, dict) or f not in d:
                raise LoadError(f"missing required field {f!r}", index=i, field=f)
            vals[role] = d[f]
        answer = str(vals["answer"])
        answer = table["answer_map"].get(answer, answer)
        image_ref = str(Path(table["image_dir"]) / table["image_template"].format(image=vals["image"]))
        records.append(QARecord(image_ref, str(vals["question"]), answer, "general"))
    return records


def load_external(
    path: str | Path,
    format: str,
    categories: str | Path | None = None,
    image_root: str | Path | None = None,
    validate_images: bool = True,
    name: str | None = None,
) -> DatasetManifest:
    """Load a dataset file into a DatasetManifest.

    ``categories`` is an optional sidecar (JSON list aligned with the records,
    or an object keyed by record index) overriding the default ``general``.
    """
    path = Path(path)
    if format not in FORMATS:
        raise ConfigurationError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if format == "canonical_jsonl":
        records = _load_canonical(path)
    else:
        records = _load_adapted(path, format)
    if categories is not None:
        cats = _read_sidecar(categories, len(records))
        records = [QARecord(r.image_ref, r.question, r.gold_answer, c) for r, c in zip(records, cats)]
    if not records:
        raise ValidationError(f"{path}: no records")
    root = Path(image_root) if image_root is not None else path.parent
    manifest = DatasetManifest(name or path.stem, tuple(records), str(root))
    if validate_images:
        manifest.validate_images()
    return manifest


def record_line(r: QARecord) -> str:
    return json.dumps({f: getattr(r, f) for f in RECORD_FIELDS}, ensure_ascii=False)


def save_canonical(manifest: DatasetManifest, path: str | Path) -> None:
    """Write records as JSON-lines in a fixed field order."""
    if not manifest.records:
        raise ValidationError("refusing to save an empty manifest")
    text = "".join(record_line(r) + "\n" for r in manifest.records)
    Path(path).write_text(text, encoding="utf-8")


def save_stage1(examples: Iterable[Stage1Example], path: str | Path) -> None:
    lines = [json.dumps(e.to_dict(), ensure_ascii=False) for e in examples]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_stage1(path: str | Path) -> list[Stage1Example]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            d = json.loads(line)
            for f in ("image_ref", "task", "prefix", "label"):
                if f not in d:
                    raise LoadError(f"missing required field {f!r}", index=i, field=f)
            out.append(Stage1Example(d["image_ref"], d["task"], d["prefix"], d["label"]))
    return out


def chart_id_of(image_ref: str) -> str:
    return Path(image_ref).stem


class ChartStore:
    """Resolves image references to ChartImages and chart ids to ChartSpecs.

    Backed by in-memory specs, a dataset directory, or both. Images come from
    files under ``root`` when present (decoded and resized), otherwise they are
    rendered from the chart spec.
    """

    def __init__(self, root: str | Path | None = None, specs: Iterable[ChartSpec] = ()):
        self.root = Path(root) if root is not None else None
        self._specs = {s.chart_id: s for s in specs}
        self._images: dict[tuple[str, int], ChartImage] = {}

    def spec(self, chart_id: str) -> ChartSpec:
        chart_id = chart_id_of(chart_id)
        if chart_id in self._specs:
            return self._specs[chart_id]
        if self.root is not None:
            p = self.root / "specs" / f"{chart_id}.json"
            if p.is_file():
                spec = load_spec(p)
                self._specs[chart_id] = spec
                return spec
        raise KeyError(chart_id)

    def has_spec(self, chart_id: str) -> bool:
        try:
            self.spec(chart_id)
        except KeyError:
            return False
        return True

    def image(self, image_ref: str, resolution: int) -> ChartImage:
        key = (image_ref, resolution)
        if key not in self._images:
            self._images[key] = self._load(image_ref, resolution)
        return self._images[key]

    def _load(self, image_ref: str, resolution: int) -> ChartImage:
        cid = chart_id_of(image_ref)
        if self.root is not None:
            p = self.root / image_ref
            if p.is_file():
                return load_png(p, resolution, spec_ref=cid)
        try:
            spec = self.spec(cid)
        except KeyError:
            raise FileNotFoundError(f"image {image_ref!r} not found") from None
        return render(spec, resolution)

    def clear_images(self) -> None:
        self._images.clear()


def write_synthetic_dataset(corpus: Corpus, out_dir: str | Path, resolution: int,
                            settings: dict | None = None) -> DatasetManifest:
    """Persist a generated corpus as a dataset directory."""
    out = Path(out_dir)
    (out / "specs").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for spec in corpus.specs:
        save_spec(spec, out / "specs" / f"{spec.chart_id}.json")
        save_png(render(spec, resolution), out / "images" / f"{spec.chart_id}.png")
    manifest = DatasetManifest(out.name, tuple(corpus.records), str(out))
    save_canonical(manifest, out / "manifest.jsonl")
    save_stage1(corpus.stage1, out / "stage1.jsonl")
    counts = {c: sum(r.category == c for r in corpus.records) for c in CATEGORIES}
    meta = {"resolution": resolution, "num_charts": len(corpus.specs),
            "num_records": len(corpus.records), "category_counts": counts,
            "settings": settings or {}}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def synthetic_image_ref(spec: ChartSpec) -> str:
    return f"images/{spec.chart_id}.png"


def open_dataset(path: str | Path, validate_images: bool = True) -> tuple[DatasetManifest, ChartStore]:
    """Open a dataset directory (or a manifest file inside one)."""
    p = Path(path)
    manifest_path = p / "manifest.jsonl" if p.is_dir() else p
    manifest = load_external(manifest_path, "canonical_jsonl", validate_images=validate_images,
                             name=manifest_path.parent.name if p.is_dir() else None)
    return manifest, ChartStore(Path(manifest.image_root))
