"""Two-stage training.

Stage 1 (alignment) updates only the connector; stage 2 (reasoning) updates
the connector and the language model. The vision encoder stays frozen in both
stages unless a vision warm-up is explicitly requested, which is recorded as a
deviation in the checkpoint's stage metadata.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from chartalign.chart2text import ORACLE, chart_to_text
from chartalign.dataset_io import ChartStore, chart_id_of
from chartalign.errors import ConfigurationError, DataError, DivergenceError
from chartalign.language_model import collate, embed_layout, layout_ids
from chartalign.model import GROUPS, ChartQAModel, Checkpoint, ModelConfig, init_checkpoint
from chartalign.model import load_checkpoint, save_checkpoint  # noqa: F401  re-exported
from chartalign.synth.qa import QARecord, Stage1Example
from chartalign.tokenizer import Tokenizer

log = logging.getLogger(__name__)

STAGES = ("alignment", "reasoning")
STAGE_SCOPE = {"alignment": ("connector",), "reasoning": ("connector", "lm")}
STAGE_DEFAULTS = {
    "alignment": {"learning_rate": 1e-6, "batch_size": 16, "epochs": 6},
    "reasoning": {"learning_rate": 1e-5, "batch_size": 8, "epochs": 8},
}


@dataclass
class TrainConfig:
    stage: str
    learning_rate: float | None = None
    batch_size: int | None = None
    epochs: int | None = None
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.001
    eps: float = 1e-8
    seed: int = 0
    use_chart_to_text: bool = True
    engine: str = ORACLE
    connector_mode: str | None = None
    image_resolution: int | None = None
    max_steps: int | None = None
    grad_clip: float | None = 1.0
    loss_reduction: str = "mean"
    allow_skip_stage1: bool = False
    vision_warmup_steps: int = 0
    log_path: str | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"stage must be one of {STAGES}, got {self.stage!r}")
        for k, v in STAGE_DEFAULTS[self.stage].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigurationError("loss_reduction must be 'mean' or 'sum'")
        if self.vision_warmup_steps < 0:
            raise ConfigurationError("vision_warmup_steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainExample:
    image_ref: str
    question: list[int]
    table: list[int]
    answer: list[int]


@dataclass
class TrainBatch:
    image_refs: list[str]
    layouts: list[tuple[list[int], list[bool]]]
    features: torch.Tensor | None = None  # [B, N_p, d_v]
    pixels: torch.Tensor | None = None  # [B, H, W, 3]


# --- loss ---------------------------------------------------------------------

def masked_cross_entropy(logits: torch.Tensor, ids: torch.Tensor, mask: torch.Tensor,
                         reduction: str = "mean") -> torch.Tensor:
    """-(1/sum mask) * sum over supervised positions of log P(token | prefix).

    Position t is predicted from the logits at t-1.
    """
    if mask.ndim == 1:
        logits, ids, mask = logits.unsqueeze(0), ids.unsqueeze(0), mask.unsqueeze(0)
    tgt_mask = mask[:, 1:]
    per_example = tgt_mask.sum(dim=1)
    if (per_example == 0).any():
        bad = int(torch.nonzero(per_example == 0)[0, 0])
        raise DataError(f"example {bad} in batch has no supervised position")
    logp = torch.log_softmax(logits[:, :-1], dim=-1)
    tgt = ids[:, 1:].clamp(min=0)
    nll = -logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
    total = (nll * tgt_mask).sum()
    if reduction == "sum":
        return total
    return total / tgt_mask.sum()


def scope_parameters(model: ChartQAModel, scope: Iterable[str]) -> list[tuple[str, torch.nn.Parameter]]:
    out = []
    for g in scope:
        out += [(f"{g}.{n}", p) for n, p in model.group_parameters(g)]
    return out


def batch_logits(batch: TrainBatch, model: ChartQAModel, vision_trainable: bool = False):
    if vision_trainable or batch.features is None:
        if batch.pixels is None:
            raise DataError("batch carries neither features nor pixels")
        feats = model.vision(batch.pixels)
    else:
        feats = batch.features
    rows = model.connector(feats)
    b = collate(batch.layouts)
    emb = embed_layout(b.ids, rows, model.lm)
    return model.lm(emb), b


def compute_loss(batch: TrainBatch, model: ChartQAModel, trainable_scope: Sequence[str],
                 reduction: str = "mean") -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Cross-entropy over the supervised positions and its gradients.

    Returns ``(loss, grads)`` where ``grads`` maps ``"<group>.<param>"`` to a
    gradient tensor for every parameter in ``trainable_scope`` only.
    """
    if not batch.layouts:
        raise DataError("empty batch")
    for g in trainable_scope:
        if g not in GROUPS:
            raise ConfigurationError(f"unknown parameter group {g!r}")
    logits, b = batch_logits(batch, model, vision_trainable="vision" in trainable_scope)
    loss = masked_cross_entropy(logits, b.ids, b.mask, reduction)
    named = scope_parameters(model, trainable_scope)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = {}
    for (n, p), g in zip(named, grads):
        out[n] = torch.zeros_like(p) if g is None else g
    return loss.detach(), out


# --- data preparation ---------------------------------------------------------

def tokenizer_corpus(records: Iterable[QARecord] = (), stage1: Iterable[Stage1Example] = (),
                     store: ChartStore | None = None) -> list[str]:
    texts = []
    for r in records:
        texts += [r.question, r.gold_answer]
        if store is not None and store.has_spec(chart_id_of(r.image_ref)):
            texts.append(chart_to_text(store.spec(chart_id_of(r.image_ref))).text)
    for e in stage1:
        texts += [e.prefix, e.label]
    return texts


def build_tokenizer(records: Iterable[QARecord] = (), stage1: Iterable[Stage1Example] = (),
                    store: ChartStore | None = None, max_merges: int = 200) -> Tokenizer:
    return Tokenizer.build(tokenizer_corpus(records, stage1, store), max_merges=max_merges)


def prepare_stage1(data: Sequence[Stage1Example], tokenizer: Tokenizer) -> list[TrainExample]:
    return [TrainExample(e.image_ref, tokenizer.tokenize(e.prefix), [], tokenizer.tokenize(e.label))
            for e in data]


def table_tokens(image_ref: str, store: ChartStore, tokenizer: Tokenizer, use_chart_to_text: bool,
                 engine: str, resolution: int) -> list[int]:
    if not use_chart_to_text:
        return []
    if engine == ORACLE:
        table = chart_to_text(store.spec(chart_id_of(image_ref)))
    else:
        table = chart_to_text(store.image(image_ref, resolution), engine=engine, spec_resolver=store.spec)
    return tokenizer.tokenize(table.text)


def prepare_stage2(data: Sequence[QARecord], tokenizer: Tokenizer, store: ChartStore,
                   use_chart_to_text: bool, engine: str = ORACLE, resolution: int = 448) -> list[TrainExample]:
    out = []
    tables: dict[str, list[int]] = {}
    for r in data:
        if r.image_ref not in tables:
            tables[r.image_ref] = table_tokens(r.image_ref, store, tokenizer, use_chart_to_text, engine, resolution)
        out.append(TrainExample(r.image_ref, tokenizer.tokenize(r.question), tables[r.image_ref],
                                tokenizer.tokenize(r.gold_answer)))
    return out


class FeatureCache:
    """Frozen-encoder features per image reference."""

    def __init__(self, model: ChartQAModel, store: ChartStore, resolution: int):
        self.model, self.store, self.resolution = model, store, resolution
        self._cache: dict[str, torch.Tensor] = {}

    def pixels(self, refs: Sequence[str]) -> torch.Tensor:
        dtype = self.model.vision.patch_projection.dtype
        arr = np.stack([self.store.image(r, self.resolution).pixels for r in refs])
        return torch.from_numpy(arr).to(dtype)

    def features(self, refs: Sequence[str]) -> torch.Tensor:
        missing = [r for r in dict.fromkeys(refs) if r not in self._cache]
        if missing:
            with torch.no_grad():
                for i in range(0, len(missing), 16):
                    chunk = missing[i : i + 16]
                    feats = self.model.vision(self.pixels(chunk))
                    for r, f in zip(chunk, feats):
                        self._cache[r] = f
        return torch.stack([self._cache[r] for r in refs])

    def clear(self) -> None:
        self._cache.clear()


def make_batch(examples: Sequence[TrainExample], cache: FeatureCache, with_pixels: bool = False) -> TrainBatch:
    M = cache.model.connector.output_rows((cache.resolution // cache.model.config.vision.patch_size) ** 2)
    layouts = [layout_ids(M, e.table, e.question, e.answer) for e in examples]
    refs = [e.image_ref for e in examples]
    if with_pixels:
        return TrainBatch(refs, layouts, pixels=cache.pixels(refs))
    return TrainBatch(refs, layouts, features=cache.features(refs))


# --- training loop ------------------------------------------------------------

def _check_model_matches(ckpt: Checkpoint, config: TrainConfig) -> int:
    mc = ckpt.config
    if config.connector_mode is not None and config.connector_mode != mc.connector.mode:
        raise ConfigurationError(
            f"config asks for connector {config.connector_mode!r} but the checkpoint has {mc.connector.mode!r}"
        )
    res = config.image_resolution if config.image_resolution is not None else mc.resolution
    if res != mc.resolution:
        raise ConfigurationError(
            f"config asks for resolution {res} but the checkpoint was built for {mc.resolution}"
        )
    return res


def _check_lengths(examples: Sequence[TrainExample], ckpt: Checkpoint, resolution: int) -> None:
    mc = ckpt.config
    M = ckpt.model.connector.output_rows((resolution // mc.vision.patch_size) ** 2)
    limit = mc.lm.max_len
    for i, e in enumerate(examples):
        n = len(layout_ids(M, e.table, e.question, e.answer)[0])
        if n > limit:
            raise ConfigurationError(f"example {i} needs {n} positions; LM max_len is {limit}")


def _run(init: Checkpoint, examples: list[TrainExample], config: TrainConfig, store: ChartStore,
         stage_name: str) -> Checkpoint:
    if not examples:
        raise DataError("no training examples")
    resolution = _check_model_matches(init, config)
    _check_lengths(examples, init, resolution)
    ckpt = init.clone()
    model = ckpt.model
    model.train()
    scope = STAGE_SCOPE[stage_name]
    warmup = config.vision_warmup_steps if stage_name == "reasoning" else 0
    for g in GROUPS:
        model.group(g).requires_grad_(g in scope or (g == "vision" and warmup > 0))

    params = [p for _, p in scope_parameters(model, scope)]
    groups = [{"params": params}]
    if warmup > 0:
        groups.append({"params": [p for _, p in scope_parameters(model, ("vision",))]})
    opt = torch.optim.AdamW(groups, lr=config.learning_rate, betas=(config.beta1, config.beta2),
                            weight_decay=config.weight_decay, eps=config.eps)

    cache = FeatureCache(model, store, resolution)
    n = len(examples)
    total = config.max_steps or config.epochs * math.ceil(n / config.batch_size)
    rng = np.random.default_rng(config.seed)
    order: list[int] = []
    history: list[float] = []
    log_fh = open(config.log_path, "a", encoding="utf-8") if config.log_path else None
    step = 0
    interrupted = False
    try:
        while step < total:
            if not order:
                order = [int(i) for i in rng.permutation(n)]
            idx, order = order[: config.batch_size], order[config.batch_size :]
            in_warmup = step < warmup
            batch = make_batch([examples[i] for i in idx], cache, with_pixels=in_warmup)
            active = scope + (("vision",) if in_warmup else ())
            loss, grads = compute_loss(batch, model, active, config.loss_reduction)
            value = float(loss)
            if not math.isfinite(value):
                last = history[-1] if history else None
                raise DivergenceError(
                    f"{stage_name} step {step}: non-finite loss {value} (last finite loss {last})"
                )
            named = scope_parameters(model, active)
            for name, p in named:
                p.grad = grads[name]
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_([p for _, p in named], config.grad_clip)
            opt.step()
            opt.zero_grad(set_to_none=True)
            if in_warmup and step + 1 == warmup:
                cache.clear()
            history.append(value)
            if log_fh:
                log_fh.write(json.dumps({"step": step, "stage": stage_name, "loss": value,
                                         "lr": config.learning_rate, "timestamp": time.time()}) + "\n")
            step += 1
    except KeyboardInterrupt:
        interrupted = True
        log.warning("%s interrupted at step %d", stage_name, step)
    finally:
        if log_fh:
            log_fh.close()
        model.requires_grad_(True)
        model.eval()

    entry = {
        "stage": stage_name,
        "trainable": list(scope),
        "steps": step,
        "interrupted": interrupted,
        "resolution": resolution,
        "use_chart_to_text": config.use_chart_to_text if stage_name == "reasoning" else False,
        "engine": config.engine,
        "first_loss": history[0] if history else None,
        "final_loss": history[-1] if history else None,
        "config": config.to_dict(),
    }
    if warmup > 0:
        entry["trainable"].append("vision")
        entry["deviations"] = [f"vision encoder trained for {warmup} warm-up steps"]
    ckpt.stage_meta = dict(ckpt.stage_meta)
    ckpt.stage_meta["stages"] = list(ckpt.stage_meta.get("stages", [])) + [entry]
    ckpt.config_snapshot = dict(ckpt.config_snapshot)
    ckpt.config_snapshot[stage_name] = config.to_dict()
    ckpt.history = history
    return ckpt


def train_stage1(data: Sequence[Stage1Example], config: TrainConfig, init: Checkpoint,
                 store: ChartStore) -> Checkpoint:
    """Alignment: only the connector is updated."""
    if config.stage != "alignment":
        raise ConfigurationError("train_stage1 needs a config with stage='alignment'")
    examples = prepare_stage1(data, init.tokenizer)
    return _run(init, examples, config, store, "alignment")


def train_stage2(data: Sequence[QARecord], config: TrainConfig, init: Checkpoint,
                 store: ChartStore) -> Checkpoint:
    """Reasoning: connector and language model are updated."""
    if config.stage != "reasoning":
        raise ConfigurationError("train_stage2 needs a config with stage='reasoning'")
    if "alignment" not in init.completed_stages() and not config.allow_skip_stage1:
        raise ConfigurationError(
            "stage 2 needs a stage-1 checkpoint (set allow_skip_stage1 to override)"
        )
    resolution = _check_model_matches(init, config)
    examples = prepare_stage2(data, init.tokenizer, store, config.use_chart_to_text, config.engine, resolution)
    return _run(init, examples, config, store, "reasoning")


def stage2_examples(data: Sequence[QARecord], ckpt: Checkpoint, store: ChartStore,
                    use_chart_to_text: bool, engine: str = ORACLE) -> list[TrainExample]:
    return prepare_stage2(data, ckpt.tokenizer, store, use_chart_to_text, engine, ckpt.config.resolution)
