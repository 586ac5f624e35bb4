import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartalign.chart2text import (
    ORACLE,
    LinearizedTable,
    chart_to_text,
    get_engine,
    linearize,
    numeric_tokens,
    parse_table,
    register_external_engine,
    unregister_external_engine,
)
from chartalign.errors import ConfigurationError, InputError, ValidationError
from chartalign.synth.render import render
from chartalign.synth.spec import ChartSpec, GenConfig, Series, format_number, generate_spec
from oracles import linearize_reference


def two_bar(annotate=True, title="T"):
    return ChartSpec("t0", "vertical_bar", title, ("A", "B"), (Series("s1", "red", (3.0, 5.0)),),
                     annotate, "none")


def test_golden_annotated():
    t = chart_to_text(two_bar())
    assert t == LinearizedTable("TITLE | T\ncategory | s1\nA | 3\nB | 5", True)


def test_golden_textless():
    t = chart_to_text(two_bar(annotate=False))
    assert t == LinearizedTable("TITLE | T\ncategory | s1\nA\nB", False)


def test_empty_title_row_omitted():
    assert chart_to_text(two_bar(title="")).text == "category | s1\nA | 3\nB | 5"


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_matches_reference_and_round_trips(seed):
    spec = generate_spec(seed)
    t = linearize(spec)
    assert t.text == linearize_reference(spec)
    p = parse_table(t.text)
    assert p.title == spec.title
    assert p.labels == spec.x_labels
    assert p.series_names == tuple(s.series_name for s in spec.series)
    if spec.annotate_values:
        assert p.values == tuple(tuple(format_number(s.values[j]) for s in spec.series)
                                 for j in range(spec.num_categories))
    else:
        assert p.values is None


def test_faithfulness_over_1000_specs():
    for seed in range(1000):
        spec = generate_spec(seed)
        allowed = {format_number(v) for s in spec.series for v in s.values}
        nums = numeric_tokens(chart_to_text(spec).text)
        assert set(nums) <= allowed
        if spec.textless:
            assert nums == []


def test_oracle_on_image_needs_resolver():
    spec = two_bar()
    img = render(spec, 64, 32)
    with pytest.raises(InputError):
        chart_to_text(img)
    assert chart_to_text(img, spec_resolver={spec.chart_id: spec}.__getitem__).text == linearize(spec).text
    with pytest.raises(InputError):
        chart_to_text(img, spec_resolver={}.__getitem__)


@pytest.fixture
def engine_name():
    name = "test-engine"
    yield name
    unregister_external_engine(name)


def test_register_and_resolve(engine_name):
    def fn(image):
        return "category | s\nA | 1"

    register_external_engine(engine_name, fn)
    assert get_engine(engine_name) is fn
    with pytest.raises(ConfigurationError):
        register_external_engine(engine_name, fn)
    with pytest.raises(ConfigurationError):
        register_external_engine(ORACLE, fn)
    t = chart_to_text(render(two_bar(), 64, 32), engine=engine_name)
    assert t == LinearizedTable("category | s\nA | 1", True)


def test_external_output_is_validated(engine_name):
    register_external_engine(engine_name, lambda image: "not a table")
    with pytest.raises(ValidationError):
        chart_to_text(render(two_bar(), 64, 32), engine=engine_name)


def test_unknown_engine():
    with pytest.raises(ConfigurationError):
        chart_to_text(render(two_bar(), 64, 32), engine="nope")


@pytest.mark.parametrize("text", [
    "", "TITLE | \ncategory | s\nA", "category\nA", "cat | s\nA", "category | s\nA | 1\nB",
    "category | s\nA | x", "category | s | t\nA | 1",
])
def test_parse_rejects_malformed(text):
    with pytest.raises(ValidationError):
        parse_table(text)
