import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import chartalign.evaluator as ev
from chartalign.dataset_io import ChartStore, DatasetManifest
from chartalign.errors import ConfigurationError
from chartalign.evaluator import (
    AblationBase,
    EvalOptions,
    ablation_suite,
    evaluate,
    parse_number,
    relaxed_match,
)
from chartalign.model import init_checkpoint
from chartalign.synth.qa import QARecord
from chartalign.trainer import TrainConfig

# --- relaxed match --------------------------------------------------------------

TABLE = [
    ("95", "100", True),
    ("94.9", "100", False),
    ("105", "100", True),
    ("105.01", "100", False),
    ("0", "0", True),
    ("0.001", "0", False),
    ("-0", "0", True),
    ("1,234", "1234", True),
    ("12%", "12", True),
    ("12 %", "12%", True),
    (" Yes ", "yes", True),
    ("Light  Blue", "light blue", True),
    ("Blue.", "blue", False),
    ("-10", "10", False),
    ("-9.6", "-10", True),
    ("abc", "12", False),
    ("", "", True),
    ("1e3", "1000", False),
]


@pytest.mark.parametrize("pred, gold, ok", TABLE)
def test_relaxed_match_table(pred, gold, ok):
    assert relaxed_match(pred, gold) is ok


def test_parse_number():
    assert parse_number("1,234.5") == parse_number("1234.5")
    assert parse_number("12,34") is None
    assert parse_number(".5") == parse_number("0.5")
    assert parse_number("five") is None


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=12))
def test_relaxed_match_is_reflexive(s):
    assert relaxed_match(s, s)


@settings(max_examples=200, deadline=None)
@given(st.decimals(-1e6, 1e6, places=2, allow_nan=False, allow_infinity=False),
       st.decimals(-1e6, 1e6, places=2, allow_nan=False, allow_infinity=False),
       st.floats(0, 0.5), st.floats(0, 0.5))
def test_relaxed_match_monotone_in_tolerance(p, g, t1, t2):
    lo, hi = sorted((t1, t2))
    if relaxed_match(str(p), str(g), lo):
        assert relaxed_match(str(p), str(g), hi)


# --- evaluation ------------------------------------------------------------------

@pytest.fixture(scope="module")
def setup(tiny_setup, small_corpus):
    tok, store, cfg = tiny_setup
    ck = init_checkpoint(cfg, tok, 0)
    man = DatasetManifest("small", tuple(small_corpus.records), "")
    return ck, man, store


def fake_predictions(monkeypatch, fn):
    monkeypatch.setattr(ev, "predict_answers",
                        lambda ck, records, store, options: [(fn(r), None) for r in records])


def test_perfect_predictions(setup, monkeypatch):
    ck, man, store = setup
    fake_predictions(monkeypatch, lambda r: r.gold_answer)
    rep = evaluate(ck, man, store=store)
    assert rep.accuracy == 1.0 and rep.total == len(man.records)
    assert all(a == 1.0 for _, a in rep.per_category.values())


def test_wrong_predictions(setup, monkeypatch):
    ck, man, store = setup
    fake_predictions(monkeypatch, lambda r: "zzz")
    rep = evaluate(ck, man, store=store)
    assert rep.accuracy == 0.0 and rep.correct == 0


def test_per_category_counts(setup, monkeypatch):
    ck, man, store = setup
    fake_predictions(monkeypatch, lambda r: r.gold_answer if r.category == "color" else "zzz")
    rep = evaluate(ck, man, store=store)
    n = {c: sum(r.category == c for r in man.records) for c in rep.per_category}
    assert {c: v[0] for c, v in rep.per_category.items()} == n
    assert rep.per_category["color"][1] == 1.0
    assert rep.correct == n["color"]


def test_real_model_report_is_deterministic(setup):
    ck, man, store = setup
    a = evaluate(ck, man, store=store)
    b = evaluate(ck, man, store=store)
    assert a.content_hash == b.content_hash
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["content_hash"] == a.content_hash
    assert d["config"]["checkpoint_digests"] == ck.digests()
    assert d["config"]["options"]["use_chart_to_text"] is True
    assert "Overall" in a.render_table()


def test_missing_image_is_counted_as_error(setup, small_corpus):
    ck, man, store = setup
    bad = QARecord("synthetic/images/nope.png", "What is the title of the chart?", "x", "structure")
    man2 = DatasetManifest("m", (bad,) + man.records[:3], "")
    rep = evaluate(ck, man2, store=store)
    assert rep.total == 4 and len(rep.errors) == 1
    assert rep.outcomes[0].error and not rep.outcomes[0].correct


def test_options_follow_checkpoint_stage(setup):
    ck, _, _ = setup
    ck2 = ck.clone()
    ck2.stage_meta.setdefault("stages", []).append({"stage": "reasoning", "use_chart_to_text": False})
    assert EvalOptions().resolve(ck2).use_chart_to_text is False
    assert EvalOptions(use_chart_to_text=True).resolve(ck2).use_chart_to_text is True


# --- ablations --------------------------------------------------------------------

@pytest.fixture(scope="module")
def ablation_base(tiny_setup, small_corpus):
    tok, store, cfg = tiny_setup
    return AblationBase(cfg, tok, small_corpus.stage1, small_corpus.records, store,
                        TrainConfig("alignment", learning_rate=1e-3, max_steps=2, batch_size=4),
                        TrainConfig("reasoning", learning_rate=1e-3, max_steps=2, batch_size=4))


def test_base_against_itself_has_zero_delta(ablation_base, small_corpus):
    man = DatasetManifest("small", tuple(small_corpus.records[:8]), "")
    tab = ablation_suite(ablation_base, ["base"], man, ablation_base.train_store)
    assert len(tab.rows) == 2
    assert tab.rows[0].report.content_hash == tab.rows[1].report.content_hash
    assert all(d == 0.0 for d in tab.rows[1].deltas.values())


def test_two_toggles_give_three_rows(ablation_base, small_corpus):
    man = DatasetManifest("small", tuple(small_corpus.records[:8]), "")
    tab = ablation_suite(ablation_base, ["chart2text_off", "chart2text_off_test"], man,
                         ablation_base.train_store)
    assert [r.axis for r in tab.rows] == ["base", "chart2text_off", "chart2text_off_test"]
    assert tab.rows[2].report.config["chart_to_text"] == {"train": True, "test": False}
    assert "Δ" in tab.render()
    assert len(json.loads(tab.to_json())["rows"]) == 3


def test_unknown_axis(ablation_base, small_corpus):
    man = DatasetManifest("small", tuple(small_corpus.records[:2]), "")
    with pytest.raises(ConfigurationError):
        ablation_suite(ablation_base, ["dropout"], man)


def test_resolution_axis_needs_capacity(ablation_base):
    with pytest.raises(ConfigurationError):
        ablation_base.variant("resolution_384")


def test_connector_axis_switches_mode(ablation_base):
    setup, tr, te = ablation_base.variant("connector_mlp")
    assert setup.model_config.connector.mode == "mlp" and tr and te
    _, tr, te = replace(ablation_base, eval_options=EvalOptions(use_chart_to_text=False)).variant("base")
    assert tr and not te
