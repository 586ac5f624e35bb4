"""Desk-scale chart question answering.

Synthetic charts with template QA, a ViT-style vision encoder, a
cross-attention connector, chart-to-text linearization, a small causal
language model, two-stage training and relaxed-accuracy evaluation.
"""

from chartalign.chart2text import chart_to_text, linearize, register_external_engine
from chartalign.dataset_io import ChartStore, DatasetManifest, load_external, open_dataset
from chartalign.errors import ChartAlignError
from chartalign.evaluator import AblationBase, EvalOptions, EvalReport, ablation_suite, evaluate, relaxed_match
from chartalign.model import Checkpoint, ModelConfig, init_checkpoint, load_checkpoint, save_checkpoint
from chartalign.synth.qa import generate_corpus
from chartalign.synth.render import render
from chartalign.synth.spec import ChartSpec, GenConfig, generate_spec
from chartalign.trainer import TrainConfig, build_tokenizer, compute_loss, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "AblationBase", "ChartAlignError", "ChartSpec", "ChartStore", "Checkpoint", "DatasetManifest",
    "EvalOptions", "EvalReport", "GenConfig", "ModelConfig", "TrainConfig", "ablation_suite",
    "build_tokenizer", "chart_to_text", "compute_loss", "evaluate", "generate_corpus", "generate_spec",
    "init_checkpoint", "linearize", "load_checkpoint", "load_external", "open_dataset",
    "register_external_engine", "relaxed_match", "render", "save_checkpoint", "train_stage1",
    "train_stage2",
]
