import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    from chartalign.synth import generate_corpus

    return generate_corpus(6, seed=3, resolution=128)


@pytest.fixture(scope="session")
def tiny_setup(small_corpus):
    """A tokenizer, store and small model config over ``small_corpus`` at resolution 64."""
    from chartalign.dataset_io import ChartStore
    from chartalign.model import ModelConfig
    from chartalign.trainer import build_tokenizer

    store = ChartStore(specs=small_corpus.specs)
    tok = build_tokenizer(small_corpus.records, small_corpus.stage1, store, max_merges=40)
    cfg = ModelConfig.build(tok.vocab_size, resolution=64, max_resolution=64, d_v=16, d_k=16, d_l=32,
                            vision_layers=1, vision_heads=2, lm_layers=1, lm_heads=2, num_queries=4,
                            max_len=400)
    return tok, store, cfg


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
