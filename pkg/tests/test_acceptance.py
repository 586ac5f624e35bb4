"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line with the
measured quantity and its threshold; the lines are repeated in the pytest
terminal summary.
"""

import math
import time

import numpy as np
import pytest
import torch

from chartalign.chart2text import chart_to_text, numeric_tokens
from chartalign.connector import Connector, ConnectorConfig, align, attention_weights
from chartalign.dataset_io import ChartStore, DatasetManifest, open_dataset, synthetic_image_ref
from chartalign.dataset_io import write_synthetic_dataset
from chartalign.evaluator import AblationBase, EvalOptions, ablation_suite, evaluate, relaxed_match
from chartalign.model import ModelConfig, init_checkpoint, save_checkpoint
from chartalign.synth.qa import generate_corpus
from chartalign.synth.spec import format_number, generate_spec
from chartalign.trainer import (
    FeatureCache,
    TrainConfig,
    batch_logits,
    build_tokenizer,
    compute_loss,
    make_batch,
    masked_cross_entropy,
    stage2_examples,
    train_stage1,
    train_stage2,
)
from oracles import candidate_answers, connector_naive

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# --- 1: gradient integrity --------------------------------------------------------

def test_criterion_01_gradient_integrity(small_corpus):
    t0 = time.time()
    store = ChartStore(specs=small_corpus.specs)
    tok = build_tokenizer(small_corpus.records, small_corpus.stage1, store, max_merges=20)
    assert tok.vocab_size <= 128
    cfg = ModelConfig.build(tok.vocab_size, resolution=64, max_resolution=64, patch_size=32, d_v=16, d_k=16,
                            d_l=32, vision_layers=1, vision_heads=2, lm_layers=2, lm_heads=2, num_queries=4,
                            max_len=400)
    ck = init_checkpoint(cfg, tok, 0)
    model = ck.model.double()
    ex = stage2_examples(small_corpus.records[:2], ck, store, use_chart_to_text=True)
    batch = make_batch(ex, FeatureCache(model, store, 64), with_pixels=True)
    scope = ("vision", "connector", "lm")
    _, grads = compute_loss(batch, model, scope)

    def loss_value():
        with torch.no_grad():
            logits, b = batch_logits(batch, model, vision_trainable=True)
            return masked_cross_entropy(logits, b.ids, b.mask).item()

    rng = np.random.default_rng(0)
    eps, worst = 1e-6, 0.0
    for group in scope:
        for name, p in model.group_parameters(group):
            flat = p.data.view(-1)
            idx = rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False)
            a, fd = [], []
            for i in idx:
                old = flat[i].item()
                flat[i] = old + eps
                up = loss_value()
                flat[i] = old - eps
                down = loss_value()
                flat[i] = old
                fd.append((up - down) / (2 * eps))
                a.append(grads[f"{group}.{name}"].reshape(-1)[i].item())
            a, fd = np.array(a), np.array(fd)
            denom = max(np.linalg.norm(fd), np.linalg.norm(a), 1e-8)
            worst = max(worst, float(np.linalg.norm(a - fd) / denom))
    elapsed = time.time() - t0
    report(1, worst < 1e-3 and elapsed < 60,
           f"max relative error {worst:.2e} (< 1e-3) over all groups, {elapsed:.1f}s (< 60s)")


# --- 2: connector contracts -----------------------------------------------------------

def test_criterion_02_connector_contracts():
    gen = torch.Generator().manual_seed(0)
    torch.manual_seed(0)
    con = Connector(ConnectorConfig(d_v=8, d_l=6, num_queries=3, d_k=5)).double()
    row_err = 0.0
    for _ in range(100):
        V = torch.randn(int(torch.randint(1, 20, (1,), generator=gen)), 8, dtype=torch.float64, generator=gen) * 5
        A = attention_weights(V, con)[0]
        row_err = max(row_err, (A.sum(-1) - 1).abs().max().item())
    v = torch.randn(1, 8, dtype=torch.float64, generator=gen)
    single = align(v, con).tokens
    expect = (v @ con.W_v @ con.W_o).expand(3, -1)
    single_err = (single - expect).abs().max().item()
    V = torch.randn(7, 8, dtype=torch.float64, generator=gen)
    A_ref, out_ref = connector_naive(V.numpy(), con.learned_queries.detach().numpy(), con.W_k.detach().numpy(),
                                     con.W_v.detach().numpy(), con.W_o.detach().numpy())
    naive_err = max(np.abs(attention_weights(V, con)[0].detach().numpy() - A_ref).max(),
                    np.abs(align(V, con).tokens.detach().numpy() - out_ref).max())
    report(2, row_err < 1e-6 and single_err < 1e-6 and naive_err < 1e-6,
           f"row-sum error {row_err:.1e}, single-token error {single_err:.1e}, naive-oracle error "
           f"{naive_err:.1e} (each < 1e-6)")


# --- 3: loss sanity ----------------------------------------------------------------

def test_criterion_03_loss_sanity():
    V = 64
    ids = torch.randint(0, V, (3, 10), generator=torch.Generator().manual_seed(1))
    mask = torch.zeros(3, 10, dtype=torch.bool)
    mask[:, 4:] = True
    uniform = masked_cross_entropy(torch.zeros(3, 10, V, dtype=torch.float64), ids, mask).item()
    logits = torch.zeros(3, 10, V, dtype=torch.float64)
    logits[:, :-1].scatter_(-1, ids[:, 1:, None], 1e4)
    saturated = masked_cross_entropy(logits, ids, mask).item()
    err = abs(uniform - math.log(V))
    report(3, err < 1e-5 and saturated < 1e-3,
           f"|uniform - ln {V}| = {err:.1e} (< 1e-5), saturated loss {saturated:.1e} (< 1e-3)")


# --- 4: freeze contract ------------------------------------------------------------

def test_criterion_04_freeze_contract(tiny_setup, small_corpus):
    tok, store, cfg = tiny_setup
    init = init_checkpoint(cfg, tok, 0)
    s1 = train_stage1(small_corpus.stage1, TrainConfig("alignment", learning_rate=1e-3, max_steps=5, batch_size=4),
                      init, store)
    s2 = train_stage2(small_corpus.records, TrainConfig("reasoning", learning_rate=1e-3, max_steps=5, batch_size=4),
                      s1, store)
    d0, d1, d2 = init.digests(), s1.digests(), s2.digests()
    ok = (d1["lm"] == d0["lm"] and d1["vision"] == d0["vision"] and d2["vision"] == d0["vision"]
          and d1["connector"] != d0["connector"] and d2["lm"] != d1["lm"])
    report(4, ok, "stage 1 leaves LM and vision digests unchanged, stage 2 leaves vision unchanged "
                  "(trained groups do change)")


# --- 5: overfit ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_overfit():
    t0 = time.time()
    c = generate_corpus(8, seed=0, resolution=448)
    assert len(c.records) == 32
    store = ChartStore(specs=c.specs)
    tok = build_tokenizer(c.records, c.stage1, store)
    ck = init_checkpoint(ModelConfig.build(tok.vocab_size, resolution=448), tok, 0)
    s1 = train_stage1(c.stage1, TrainConfig("alignment", learning_rate=1e-3, max_steps=200), ck, store)
    s2 = train_stage2(c.records, TrainConfig("reasoning", learning_rate=1e-3, max_steps=800), s1, store)
    rep = evaluate(s2, DatasetManifest("overfit", tuple(c.records), ""), None, store)
    elapsed = time.time() - t0
    report(5, rep.accuracy >= 0.95 and elapsed < 600,
           f"training-set relaxed accuracy {100 * rep.accuracy:.2f}% (>= 95%) after 200 + 800 steps, "
           f"{elapsed:.0f}s (< 600s)")


# --- 6: metric table -----------------------------------------------------------------

METRIC_TABLE = [
    ("104", "100", True), ("105", "100", True), ("105.1", "100", False), ("95", "100", True),
    ("94.9", "100", False), ("0", "0", True), ("0.001", "0", False),
    ("Dark Blue", "dark blue", True), ("dark blue.", "dark blue", False),
]


def test_criterion_06_metric_table():
    bad = [(p, g) for p, g, want in METRIC_TABLE if relaxed_match(p, g) is not want]
    report(6, not bad, f"{len(METRIC_TABLE) - len(bad)}/{len(METRIC_TABLE)} relaxed_match examples agree")


# --- 7: chart-to-text faithfulness ---------------------------------------------------------

def test_criterion_07_chart_to_text_faithfulness():
    hallucinated = textless_values = textless = 0
    for seed in range(1000):
        spec = generate_spec(seed)
        allowed = {format_number(v) for s in spec.series for v in s.values}
        nums = numeric_tokens(chart_to_text(spec).text)
        hallucinated += sum(n not in allowed for n in nums)
        if spec.textless:
            textless += 1
            textless_values += len(nums)
    report(7, hallucinated == 0 and textless_values == 0 and textless > 0,
           f"{hallucinated} hallucinated numeric tokens over 1000 specs, {textless_values} value tokens "
           f"over {textless} textless specs (both must be 0)")


# --- 8: ablation direction ----------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_ablation_direction():
    t0 = time.time()
    train = generate_corpus(300, seed=0, resolution=448)
    held = generate_corpus(200, seed=1_000_000, categories=("textless",), resolution=448)
    assert not {s.chart_id for s in train.specs} & {s.chart_id for s in held.specs}
    store = ChartStore(specs=train.specs + held.specs)
    tok = build_tokenizer(train.records, train.stage1, store)
    base = AblationBase(ModelConfig.build(tok.vocab_size, resolution=448), tok, train.stage1, train.records,
                        store, TrainConfig("alignment", learning_rate=1e-3, max_steps=200),
                        TrainConfig("reasoning", learning_rate=1e-3, max_steps=3000))
    manifest = DatasetManifest("textless-heldout", tuple(held.records), "")
    assert len(manifest.records) >= 200
    table = ablation_suite(base, ["chart2text_off"], manifest, store)
    on, off = (r.report.per_category["textless"][1] for r in table.rows)
    print(table.render())
    report(8, on > off, f"textless accuracy {100 * on:.2f}% with chart-to-text vs {100 * off:.2f}% without "
                        f"on {len(manifest.records)} held-out questions ({time.time() - t0:.0f}s)")


# --- 9: determinism -----------------------------------------------------------------------

def end_to_end(root):
    corpus = generate_corpus(2, seed=21, resolution=384, image_ref=synthetic_image_ref)
    write_synthetic_dataset(corpus, root / "data", 384)
    manifest, store = open_dataset(root / "data")
    tok = build_tokenizer(manifest.records, corpus.stage1, store, max_merges=40)
    cfg = ModelConfig.build(tok.vocab_size, resolution=384, d_v=16, d_k=16, d_l=32, vision_layers=1,
                            vision_heads=2, lm_layers=1, lm_heads=2, num_queries=4, max_len=500)
    ck = init_checkpoint(cfg, tok, 0)
    ck = train_stage1(corpus.stage1, TrainConfig("alignment", learning_rate=1e-3, max_steps=4, batch_size=4),
                      ck, store)
    ck = train_stage2(manifest.records, TrainConfig("reasoning", learning_rate=1e-3, max_steps=4, batch_size=4),
                      ck, store)
    save_checkpoint(ck, root / "final.ckpt")
    return ck.digests(), (root / "final.ckpt").read_bytes(), evaluate(ck, manifest, EvalOptions(), store)


def test_criterion_09_determinism(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    da, ba, ra = end_to_end(tmp_path / "a")
    db, bb, rb = end_to_end(tmp_path / "b")
    report(9, da == db and ba == bb and ra.content_hash == rb.content_hash,
           f"checkpoint digests equal: {da == db}, checkpoint bytes equal: {ba == bb}, "
           f"report hash {ra.content_hash[:12]} vs {rb.content_hash[:12]}")


# --- 10: oracle consistency --------------------------------------------------------------------

def test_criterion_10_oracle_consistency():
    corpus = generate_corpus(250, seed=5)
    specs = {s.chart_id: s for s in corpus.specs}
    bad = sum(candidate_answers(specs[r.image_ref]).get(r.question) != r.gold_answer for r in corpus.records)
    n = len(corpus.records)
    report(10, bad == 0, f"{n - bad}/{n} gold answers match the brute-force recomputation")
