"""Synthesize a small corpus, train both stages and evaluate on the training set.

Runs in about a minute on one CPU core:

    python3 demos/quickstart.py
"""

import torch

from chartalign import (
    ChartStore,
    DatasetManifest,
    ModelConfig,
    TrainConfig,
    build_tokenizer,
    evaluate,
    generate_corpus,
    init_checkpoint,
    train_stage1,
    train_stage2,
)

torch.set_num_threads(1)

corpus = generate_corpus(8, seed=0, resolution=448)  # 8 questions per category
store = ChartStore(specs=corpus.specs)  # renders images on demand from their specs
tok = build_tokenizer(corpus.records, corpus.stage1, store)
ckpt = init_checkpoint(ModelConfig.build(tok.vocab_size, resolution=448), tok, seed=0)

# stage 1 trains only the connector; stage 2 adds the language model
ckpt = train_stage1(corpus.stage1, TrainConfig("alignment", learning_rate=1e-3, max_steps=200), ckpt, store)
ckpt = train_stage2(corpus.records, TrainConfig("reasoning", learning_rate=1e-3, max_steps=800), ckpt, store)
print("parameter digests:", ckpt.digests())

report = evaluate(ckpt, DatasetManifest("train", tuple(corpus.records), ""), store=store)
print(report.render_table())
for o in report.outcomes[:6]:
    print(f"{o.question!r}: predicted {o.predicted!r}, gold {o.gold!r}")
