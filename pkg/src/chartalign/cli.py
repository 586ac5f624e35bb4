"""Command-line entry point: synth, train, eval, predict, chart2text, ablate.

Config files are single JSON documents using TrainConfig / GenConfig field
names; command-line flags override file values. Data goes to files or
standard output, logs to standard error.
"""

from __future__ import annotations

import argparse
import importlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path


from chartalign.chart2text import ORACLE, chart_to_text, get_engine, register_external_engine, registered_engines
from chartalign.dataset_io import FORMATS, ChartStore, load_external, load_stage1, open_dataset, synthetic_image_ref
from chartalign.dataset_io import write_synthetic_dataset
from chartalign.errors import ChartAlignError, ConfigurationError
from chartalign.evaluator import AXES, AblationBase, EvalOptions, ablation_suite, evaluate, predict_answers
from chartalign.model import ModelConfig, init_checkpoint, load_checkpoint, save_checkpoint
from chartalign.synth.qa import CATEGORIES, QARecord, generate_corpus
from chartalign.synth.render import SUPPORTED_RESOLUTIONS
from chartalign.synth.spec import GenConfig, load_spec
from chartalign.trainer import TrainConfig, build_tokenizer, train_stage1, train_stage2

log = logging.getLogger("chartalign")

OUTPUT_ENV = "CHARTALIGN_OUTPUT_DIR"
STAGE_NAMES = {"1": "alignment", "2": "reasoning"}
# model-architecture keys accepted under "model" in a config file
MODEL_KEYS = ("d_v", "d_k", "d_l", "vision_layers", "vision_heads", "lm_layers", "lm_heads", "num_queries",
              "patch_size", "max_resolution", "max_len", "query_source", "connector_heads", "mlp_hidden",
              "max_merges")


class CliError(ChartAlignError):
    pass


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file {path} not found")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return d


def _output_path(value: str | None, default_name: str) -> Path:
    if value:
        return Path(value)
    root = os.environ.get(OUTPUT_ENV)
    if not root:
        raise CliError(f"no output path given and {OUTPUT_ENV} is not set")
    return Path(root) / default_name


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} {path} not found")
    return p


def _load_engine(name: str) -> str:
    """Resolve an engine name; ``module:function`` imports and registers it."""
    if name == ORACLE or name in registered_engines():
        return name
    if ":" in name:
        mod, fn = name.split(":", 1)
        try:
            func = getattr(importlib.import_module(mod), fn)
        except (ImportError, AttributeError) as exc:
            raise CliError(f"cannot load engine {name!r}: {exc}") from exc
        register_external_engine(name, func)
        return name
    get_engine(name)  # raises ConfigurationError for unknown names
    return name


# --- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _read_config(args.config)
    gen = GenConfig.from_dict(cfg.get("gen", {k: v for k, v in cfg.items() if k in GenConfig.__dataclass_fields__}))
    if args.textless_prob is not None:
        gen = replace(gen, textless_prob=args.textless_prob)
    n = args.n_per_category if args.n_per_category is not None else cfg.get("n_per_category", 50)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    res = args.resolution if args.resolution is not None else cfg.get("resolution", 448)
    cats = tuple(args.categories.split(",")) if args.categories else tuple(cfg.get("categories", CATEGORIES))
    for c in cats:
        if c not in CATEGORIES:
            raise CliError(f"unknown category {c!r}; choose from {CATEGORIES}")
    if n < 1:
        raise CliError("--n-per-category must be >= 1")
    out = _output_path(args.out, "dataset")
    corpus = generate_corpus(n, seed=seed, config=gen, categories=cats, resolution=res,
                             image_ref=synthetic_image_ref)
    settings = {"n_per_category": n, "seed": seed, "resolution": res, "categories": list(cats),
                "gen": gen.to_dict()}
    manifest = write_synthetic_dataset(corpus, out, res, settings)
    log.info("wrote %d records over %d charts to %s", len(manifest.records), len(corpus.specs), out)
    print(out)
    return 0


def _train_config(args, stage: str, cfg: dict) -> TrainConfig:
    d = {k: v for k, v in cfg.items() if k in TrainConfig.__dataclass_fields__}
    d.update(cfg.get(stage, {}))
    d["stage"] = stage
    flags = {"learning_rate": args.lr, "batch_size": args.batch_size, "epochs": args.epochs,
             "seed": args.seed, "max_steps": args.max_steps, "engine": args.engine,
             "connector_mode": args.connector, "image_resolution": args.resolution,
             "log_path": args.log}
    d.update({k: v for k, v in flags.items() if v is not None})
    if args.no_chart2text:
        d["use_chart_to_text"] = False
    if args.allow_skip_stage1:
        d["allow_skip_stage1"] = True
    return TrainConfig.from_dict(d)


def _fresh_checkpoint(data_dir: Path, manifest, store, stage1, cfg: dict, tc: TrainConfig):
    model_kw = dict(cfg.get("model", {}))
    unknown = set(model_kw) - set(MODEL_KEYS)
    if unknown:
        raise CliError(f"unknown model config keys {sorted(unknown)}")
    max_merges = model_kw.pop("max_merges", 200)
    tok = build_tokenizer(manifest.records, stage1, store, max_merges=max_merges)
    meta = data_dir / "dataset.json"
    res = tc.image_resolution or (json.loads(meta.read_text())["resolution"] if meta.is_file() else 448)
    mc = ModelConfig.build(tok.vocab_size, resolution=res, connector_mode=tc.connector_mode or "cross_attention",
                           **model_kw)
    return init_checkpoint(mc, tok, cfg.get("init_seed", tc.seed))


def cmd_train(args) -> int:
    stage = STAGE_NAMES[args.stage]
    cfg = _read_config(args.config)
    tc = _train_config(args, stage, cfg)
    data = _require_file(args.data, "dataset")
    manifest, store = open_dataset(data, validate_images=True)
    data_dir = Path(manifest.image_root)
    stage1 = load_stage1(data_dir / "stage1.jsonl") if (data_dir / "stage1.jsonl").is_file() else []
    out = _output_path(args.out, f"stage{args.stage}.ckpt")
    if args.init:
        init = load_checkpoint(_require_file(args.init, "checkpoint"))
    elif stage == "alignment" or tc.allow_skip_stage1:
        init = _fresh_checkpoint(data_dir, manifest, store, stage1, cfg, tc)
    else:
        raise CliError("stage 2 needs --init with a stage-1 checkpoint (or --allow-skip-stage1)")
    if stage == "alignment" and not stage1:
        raise CliError(f"{data_dir} has no stage1.jsonl")
    run = {"command": "train", "argv": sys.argv[1:], "resolved": tc.to_dict(), "data": str(data)}
    log.info("training %s: %s", stage, json.dumps(tc.to_dict(), sort_keys=True))
    if stage == "alignment":
        ckpt = train_stage1(stage1, tc, init, store)
    else:
        ckpt = train_stage2(manifest.records, tc, init, store)
    ckpt.config_snapshot[f"run_{stage}"] = run
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    meta = ckpt.stage_meta["stages"][-1]
    log.info("%s: %d steps, loss %s -> %s; saved %s", stage, meta["steps"], meta["first_loss"],
             meta["final_loss"], out)
    print(out)
    if meta["interrupted"]:
        log.warning("interrupted; partial checkpoint saved to %s", out)
        return 130
    return 0


def _load_manifest(args):
    data = _require_file(args.data, "dataset")
    if args.format == "canonical_jsonl" and (data.is_dir() or data.name == "manifest.jsonl"):
        return open_dataset(data)
    manifest = load_external(data, args.format, categories=args.categories, image_root=args.image_root)
    return manifest, ChartStore(manifest.image_root)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    manifest, store = _load_manifest(args)
    engine = _load_engine(args.engine)
    opts = EvalOptions(use_chart_to_text=False if args.no_chart2text else None, engine=engine,
                       batch_size=args.batch_size)
    report = evaluate(ckpt, manifest, opts, store)
    report.config["run"] = {"command": "eval", "argv": sys.argv[1:]}
    out = _output_path(args.report, "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    table = report.render_table()
    out.with_suffix(".txt").write_text(table, encoding="utf-8")
    for e in report.errors:
        log.warning("example %s failed: %s", e.image_ref, e.error)
    sys.stdout.write(table)
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(_require_file(args.ckpt, "checkpoint"))
    image = _require_file(args.image, "image").resolve()
    specs = [load_spec(_require_file(args.spec, "spec"))] if args.spec else []
    # a synthetic dataset keeps specs next to images/
    store = ChartStore(image.parent.parent, specs)
    engine = _load_engine(args.engine)
    use = False if args.no_chart2text else None
    opts = EvalOptions(use_chart_to_text=use, engine=engine).resolve(ckpt)
    if opts.use_chart_to_text and engine == ORACLE and not store.has_spec(image.stem):
        raise CliError("the oracle chart-to-text engine needs the chart's spec: pass --spec, "
                       "another --engine, or --no-chart2text")
    (answer, err), = predict_answers(ckpt, [QARecord(str(image), args.question, "", "general")], store, opts)
    if err is not None:
        raise CliError(err)
    print(answer)
    return 0


def cmd_chart2text(args) -> int:
    engine = _load_engine(args.engine)
    if args.spec:
        spec = load_spec(_require_file(args.spec, "spec"))
        if engine == ORACLE:
            table = chart_to_text(spec)
        else:
            from chartalign.synth.render import render

            table = chart_to_text(render(spec, args.resolution), engine=engine, spec_resolver=lambda _: spec)
    else:
        image = _require_file(args.image, "image").resolve()
        store = ChartStore(image.parent.parent)
        from chartalign.synth.render import load_png

        img = load_png(image, args.resolution, spec_ref=image.stem)
        resolver = store.spec if store.has_spec(image.stem) else None
        if engine == ORACLE and resolver is None:
            raise CliError("the oracle engine needs a spec: pass --spec or choose another --engine")
        table = chart_to_text(img, engine=engine, spec_resolver=resolver)
    print(table.text)
    return 0


def _ablation_base(cfg: dict) -> AblationBase:
    if "train_data" not in cfg:
        raise CliError("ablation config needs 'train_data' (a synthetic dataset directory)")
    manifest, store = open_dataset(cfg["train_data"])
    data_dir = Path(manifest.image_root)
    stage1 = load_stage1(data_dir / "stage1.jsonl")
    s1 = TrainConfig.from_dict({**cfg.get("stage1", {}), "stage": "alignment"})
    s2 = TrainConfig.from_dict({**cfg.get("stage2", {}), "stage": "reasoning"})
    model_kw = dict(cfg.get("model", {}))
    unknown = set(model_kw) - set(MODEL_KEYS) - {"resolution"}
    if unknown:
        raise CliError(f"unknown model config keys {sorted(unknown)}")
    max_merges = model_kw.pop("max_merges", 200)
    tok = build_tokenizer(manifest.records, stage1, store, max_merges=max_merges)
    mc = ModelConfig.build(tok.vocab_size, **model_kw)
    ev = cfg.get("eval", {})
    return AblationBase(mc, tok, stage1, manifest.records, store, s1, s2, cfg.get("init_seed", 0),
                        EvalOptions(**ev))


def cmd_ablate(args) -> int:
    cfg = _read_config(args.base)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    for a in axes:
        if a not in AXES:
            raise ConfigurationError(f"unknown ablation axis {a!r}; choose from {AXES}")
    base = _ablation_base(cfg)
    manifest, store = _load_manifest(args)
    table = ablation_suite(base, axes, manifest, store)
    out = _output_path(args.report, "ablation.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    d = table.to_dict()
    d["run"] = {"command": "ablate", "argv": sys.argv[1:], "base_config": cfg}
    out.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = table.render()
    out.with_suffix(".txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chartalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic chart QA dataset")
    s.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}/dataset)")
    s.add_argument("--n-per-category", type=int, help="questions per category (default 50)")
    s.add_argument("--seed", type=int, help="generator seed (default 0)")
    s.add_argument("--resolution", type=int, choices=SUPPORTED_RESOLUTIONS, help="image side (default 448)")
    s.add_argument("--categories", help=f"comma-separated subset of {','.join(CATEGORIES)}")
    s.add_argument("--textless-prob", type=float, help="probability a chart prints no values")
    s.add_argument("--config", help="JSON file with GenConfig fields")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--stage", choices=("1", "2"), required=True)
    t.add_argument("--data", required=True, help="synthetic dataset directory")
    t.add_argument("--init", help="input checkpoint (stage 1: optional, fresh model otherwise)")
    t.add_argument("--out", help="output checkpoint (default: $%s/stage<N>.ckpt)" % OUTPUT_ENV)
    t.add_argument("--no-chart2text", action="store_true", help="leave the table slot empty")
    t.add_argument("--connector", choices=("cross_attention", "mlp"))
    t.add_argument("--resolution", type=int, choices=SUPPORTED_RESOLUTIONS)
    t.add_argument("--lr", type=float, help="learning rate (default 1e-6 stage 1, 1e-5 stage 2)")
    t.add_argument("--batch-size", type=int, help="batch size (default 16 stage 1, 8 stage 2)")
    t.add_argument("--epochs", type=int, help="epochs (default 6 stage 1, 8 stage 2)")
    t.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    t.add_argument("--seed", type=int, help="shuffling and initialization seed")
    t.add_argument("--engine", help="chart-to-text engine name or module:function")
    t.add_argument("--allow-skip-stage1", action="store_true", help="stage 2 without a stage-1 checkpoint")
    t.add_argument("--log", help="append per-step JSON lines here")
    t.add_argument("--config", help="JSON file with TrainConfig fields (flags override)")
    t.set_defaults(func=cmd_train)

    def data_args(q):
        q.add_argument("--data", required=True, help="dataset directory or manifest file")
        q.add_argument("--format", choices=FORMATS, default="canonical_jsonl")
        q.add_argument("--categories", help="category sidecar for external formats")
        q.add_argument("--image-root", help="image directory for external formats")

    e = sub.add_parser("eval", help="relaxed-accuracy evaluation")
    e.add_argument("--ckpt", required=True)
    data_args(e)
    e.add_argument("--no-chart2text", action="store_true")
    e.add_argument("--engine", default=ORACLE)
    e.add_argument("--batch-size", type=int, default=16)
    e.add_argument("--report", help="report JSON path (a .txt table is written alongside)")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="answer one question about one image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--question", required=True)
    pr.add_argument("--spec", help="chart spec JSON for the oracle chart-to-text engine")
    pr.add_argument("--no-chart2text", action="store_true")
    pr.add_argument("--engine", default=ORACLE)
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("chart2text", help="print a chart's linearized table")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec")
    g.add_argument("--image")
    c.add_argument("--engine", default=ORACLE)
    c.add_argument("--resolution", type=int, choices=SUPPORTED_RESOLUTIONS, default=448)
    c.set_defaults(func=cmd_chart2text)

    a = sub.add_parser("ablate", help="train and compare pipeline variants")
    a.add_argument("--base", required=True, help="JSON base config (train_data, model, stage1, stage2)")
    a.add_argument("--axes", required=True, help=f"comma-separated subset of {','.join(AXES)}")
    data_args(a)
    a.add_argument("--report", help="comparison JSON path (a .txt table is written alongside)")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ChartAlignError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"chartalign {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print(f"chartalign {args.command}: interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
