import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from metores.corpus import (
    STATS_HEADER,
    ConversionError,
    DatasetStats,
    InfeasibleSplitError,
    Label,
    ParseError,
    Sample,
    SplitKind,
    SplitSpec,
    ValidationError,
    compute_stats,
    convert_dataset,
    iter_canonical,
    kfold_pairs,
    load_canonical,
    sample_to_record,
    split,
    stats_csv,
    write_canonical,
)


def _s(i, key, label=Label.LITERAL, text=None):
    text = text or f"{key} is here"
    return Sample(f"id{i}", text, 0, len(key), label)


# --------------------------------------------------------------------------
# canonical format

def test_load_one_record(tmp_path):
    p = tmp_path / "a.jsonl"
    p.write_text(json.dumps({"id": "1", "text": "Germany lost in the semi-final", "target_start": 0,
                             "target_end": 7, "label": "metonymic", "dataset": "x"}) + "\n")
    (s,) = load_canonical(p)
    assert s.target == "Germany"
    assert s.pmw_key == "germany"
    assert s.label is Label.METONYMIC


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_canonical(p) == []


def test_whitespace_target_is_rejected(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"id": "bad1", "text": "a  b", "target_start": 1, "target_end": 3,
                             "label": "literal", "dataset": "x"}) + "\n")
    with pytest.raises(ValidationError, match="bad1"):
        load_canonical(p)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.jsonl"
    good = json.dumps({"id": "1", "text": "Paris", "target_start": 0, "target_end": 5,
                       "label": "literal", "dataset": "x"})
    p.write_text(good + "\n{not json\n")
    with pytest.raises(ParseError) as e:
        load_canonical(p)
    assert e.value.line == 2


def test_unknown_label_in_record(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"id": "1", "text": "Paris", "target_start": 0, "target_end": 5,
                             "label": "maybe", "dataset": "x"}) + "\n")
    with pytest.raises(ParseError):
        load_canonical(p)


def test_round_trip_is_byte_identical(tmp_path):
    samples = [Sample("a", "Paris is nice", 0, 5, Label.LITERAL, dataset="d"),
               Sample("b", "Ünïcode Köln won", 8, 12, Label.METONYMIC, "place-for-people", "d")]
    text = write_canonical(samples)
    p = tmp_path / "x.jsonl"
    p.write_text(text, encoding="utf-8")
    assert write_canonical(load_canonical(p)) == text
    assert list(iter_canonical(p)) == samples


def test_masked_sample_keeps_key_in_record():
    s = Sample("a", "X won", 0, 1, Label.METONYMIC, pmw_key="germany").validate()
    rec = json.loads(sample_to_record(s))
    assert rec["pmw_key"] == "germany"


def test_sample_invariants():
    with pytest.raises(ValidationError):
        Sample("a", "Paris", 0, 9, Label.LITERAL).validate()
    with pytest.raises(ValidationError):
        Sample("a", "Paris", 0, 5, Label.LITERAL, pmw_key="lyon").validate()


# --------------------------------------------------------------------------
# converters: the fixtures hold three hand-written records each

EXPECTED = {
    "semeval": ("semeval.xml", [("s1", "We drove across Germany in May.", "Germany", 0, None),
                                ("s2", "Britain signed the treaty.", "Britain", 1, "place-for-people"),
                                ("s3", "Fans in Germany celebrated.", "Germany", 1, "place-for-event")]),
    "relocar": ("relocar.tsv", [("r1", "Paris is lovely in spring.", "Paris", 0, None),
                                ("r2", "Paris rejected the offer.", "Paris", 1, None),
                                ("r3", "She lives near Lisbon now.", "Lisbon", 0, None)]),
    "conll": ("conll.txt", [("conll-0-0", "Italy beat Spain .", "Italy", 1, None),
                            ("conll-0-2", "Italy beat Spain .", "Spain", 1, None),
                            ("conll-1-3", "They flew to New York .", "New York", 0, None)]),
    "gwn": ("gwn.json", [("g1-0", "Floods hit Kenya and Nairobi responded quickly.", "Kenya", 0, None),
                         ("g1-1", "Floods hit Kenya and Nairobi responded quickly.", "Nairobi", 1, None),
                         ("g2-1", "The Kenyan runner visited Peru.", "Peru", 0, None)]),
    "wimcor": ("wimcor.jsonl", [("w1", "Vienna hosted the summit.", "Vienna", 1, None),
                                ("w2", "The Danube flows through Vienna.", "Vienna", 0, None),
                                ("w3", "Chile voted against it.", "Chile", 1, None)]),
}

# hand counts: (literal, metonymic, total, unique keys, words per sentence)
HAND_STATS = {
    "semeval": (1, 2, 3, 2, (6 + 4 + 4) / 3),
    "relocar": (2, 1, 3, 2, (5 + 4 + 5) / 3),
    "conll": (1, 2, 3, 3, (4 + 4 + 6) / 3),
    "gwn": (2, 1, 3, 3, (7 + 7 + 5) / 3),
    "wimcor": (1, 2, 3, 2, (4 + 5 + 4) / 3),
}


@pytest.mark.parametrize("fmt", sorted(EXPECTED))
def test_converter_fixture(fixtures, fmt):
    name, want = EXPECTED[fmt]
    got = convert_dataset(fixtures / name, fmt)
    assert [(s.id, s.text, s.target, int(s.label), s.fine_label) for s in got] == want
    for s in got:
        s.validate()
        assert s.dataset == fmt


@pytest.mark.parametrize("fmt", sorted(HAND_STATS))
def test_stats_on_fixtures_match_hand_counts(fixtures, fmt):
    st_ = compute_stats(convert_dataset(fixtures / EXPECTED[fmt][0], fmt))
    lit, met, tot, uniq, avg = HAND_STATS[fmt]
    assert (st_.n_literal, st_.n_metonymic, st_.n_total, st_.n_unique_pmw) == (lit, met, tot, uniq)
    assert st_.avg_doc_length_words == pytest.approx(avg, abs=1e-12)


def test_gwn_mixed_is_metonymic(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps([{"id": "m", "sentence": "Cuba and Haiti", "toponyms": [
        {"start": 0, "end": 4, "type": "mixed"}]}]))
    (s,) = convert_dataset(p, "gwn")
    assert s.label is Label.METONYMIC


def test_gwn_associative_readings(fixtures):
    got = convert_dataset(fixtures / "gwn.json", "gwn", associative_as_metonymic=True)
    assert [(s.target, int(s.label)) for s in got] == [
        ("Kenya", 0), ("Nairobi", 1), ("Kenyan", 1), ("Peru", 0)]


def test_semeval_metotype_kept(fixtures):
    s = convert_dataset(fixtures / "semeval.xml", "semeval")[1]
    assert (s.label, s.fine_label) == (Label.METONYMIC, "place-for-people")


def test_converter_errors(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("sentence\tstart\tend\tlabel\nParis\t0\t5\tsometimes\n")
    with pytest.raises(ConversionError):
        convert_dataset(p, "relocar")
    p.write_text("sentence\tstart\tend\tlabel\nParis is\t0\t30\tliteral\n")
    with pytest.raises(ConversionError):
        convert_dataset(p, "relocar")
    x = tmp_path / "s.xml"
    x.write_text('<sample id="1"><par>no annotation</par></sample>')
    with pytest.raises(ConversionError) as e:
        convert_dataset(x, "semeval")
    assert e.value.index == 0


# --------------------------------------------------------------------------
# statistics

def test_stats_empty():
    assert compute_stats([]) == DatasetStats(0, 0, 0, 0, 0.0)


def test_stats_three_samples():
    samples = [_s(0, "Paris"), _s(1, "paris", text="paris won"), _s(2, "Oslo", Label.METONYMIC)]
    s = compute_stats(samples)
    assert (s.n_literal, s.n_metonymic, s.n_total, s.n_unique_pmw) == (2, 1, 3, 2)


def test_stats_csv_header():
    text = stats_csv([("x", compute_stats([_s(0, "Paris")]))])
    assert text.splitlines()[0] == ",".join(STATS_HEADER)
    assert text.splitlines()[1] == "x,1,0,1,1,3.0"


# --------------------------------------------------------------------------
# splits

def test_lexical_small_example_against_enumeration():
    samples = [_s(i, k) for i, k in enumerate("aabbcc")]
    # oracle: every assignment of the three keys to two parts with sizes 4 and 2
    feasible = []
    for assign in itertools.product((0, 1), repeat=3):
        sizes = [2 * assign.count(0), 2 * assign.count(1)]
        if sizes == [4, 2]:
            feasible.append({k: p for k, p in zip("abc", assign)})
    for seed in range(20):
        tr, te = split(samples, SplitSpec(SplitKind.LEXICAL, (2 / 3, 1 / 3), seed=seed))
        got = {s.pmw_key: 0 for s in tr} | {s.pmw_key: 1 for s in te}
        assert got in feasible
        assert not {s.pmw_key for s in tr} & {s.pmw_key for s in te}


def test_lexical_single_key_is_infeasible():
    samples = [_s(i, "paris") for i in range(4)]
    with pytest.raises(InfeasibleSplitError) as e:
        split(samples, SplitSpec(SplitKind.LEXICAL, (0.5, 0.5)))
    assert e.value.key == "paris"


def test_lexical_dominating_key_named():
    samples = [_s(i, "paris") for i in range(8)] + [_s(10 + i, f"k{i}") for i in range(2)]
    with pytest.raises(InfeasibleSplitError) as e:
        split(samples, SplitSpec(SplitKind.LEXICAL, (0.5, 0.5)))
    assert e.value.key == "paris"


def test_kfold_sizes():
    samples = [_s(i, f"k{i}") for i in range(10)]
    folds = split(samples, SplitSpec(SplitKind.KFOLD, k=5, seed=3))
    assert [len(f) for f in folds] == [2] * 5
    pairs = list(kfold_pairs(folds))
    assert len(pairs) == 5
    for tr, te in pairs:
        assert len(tr) == 8 and len(te) == 2


def test_split_rejects_duplicate_ids():
    with pytest.raises(ValidationError):
        split([_s(0, "a"), _s(0, "b")], SplitSpec(SplitKind.KFOLD, k=2))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(SplitKind.LEXICAL, (0.5, 0.4))
    with pytest.raises(ValueError):
        SplitSpec(SplitKind.KFOLD, k=1)


corpora = st.lists(st.tuples(st.integers(0, 39), st.sampled_from([0, 1])), min_size=40,
                   max_size=200)


@settings(max_examples=150, deadline=None)
@given(corpora, st.integers(0, 2**31), st.sampled_from([(0.8, 0.2), (0.8, 0.1, 0.1), (0.5, 0.5)]))
def test_lexical_split_never_shares_keys(items, seed, fractions):
    samples = [_s(i, f"key{k}", Label(lab)) for i, (k, lab) in enumerate(items)]
    spec = SplitSpec(SplitKind.LEXICAL, fractions, seed=seed)
    try:
        parts = split(samples, spec)
    except InfeasibleSplitError:
        return
    keysets = [{s.pmw_key for s in p} for p in parts]
    for a, b in itertools.combinations(keysets, 2):
        assert not a & b
    assert sorted(s.id for p in parts for s in p) == sorted(s.id for s in samples)
    assert split(samples, spec) == parts


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 60), st.integers(2, 7), st.integers(0, 1000))
def test_kfold_partition_property(n, k, seed):
    samples = [_s(i, f"k{i % 5}") for i in range(n)]
    folds = split(samples, SplitSpec(SplitKind.KFOLD, k=k, seed=seed))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(s.id for f in folds for s in f) == sorted(s.id for s in samples)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 80), st.integers(0, 1000))
def test_fixed_split_is_exhaustive(n, seed):
    samples = [_s(i, f"k{i}") for i in range(n)]
    parts = split(samples, SplitSpec(SplitKind.FIXED, (0.7, 0.2, 0.1), seed=seed))
    assert sum(map(len, parts)) == n
    assert len({s.id for p in parts for s in p}) == n
