import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wals_typology.evaluator import (
    FOOTER,
    REPORT_COLUMNS,
    MetricsReport,
    aggregate,
    decode,
    metrics_row,
    render_report,
    score,
)
from wals_typology.nn.model import FLAT, MULTITASK

from fixtures import CATALOG, FIDS, GOLD, PRED, RECORDS
from helpers import tiny_space


def _logit(p):
    return np.log(p / (1 - p))


def test_decode_emit_and_abstain():
    _, space, _ = tiny_space((2, 2))
    z = _logit(np.array([[0.7, 0.2, 0.4, 0.3]]))
    (pred,) = decode(z, space, FLAT)
    assert pred["1A"][0] == 0 and np.isclose(pred["1A"][1], 0.7)
    assert "2A" not in pred


def test_decode_never_emits_masked_value():
    _, space, _ = tiny_space((3,), unobserved=[("1A", 0)])
    z = np.array([[50.0, 1.0, 0.5]])
    assert decode(z, space, FLAT)[0]["1A"][0] == 1
    assert decode(z, space, MULTITASK)[0]["1A"][0] == 1


def test_decode_ties_go_to_lowest_index():
    _, space, _ = tiny_space((3,))
    assert decode(np.array([[0.0, 2.0, 2.0]]), space, FLAT)[0]["1A"][0] == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([FLAT, MULTITASK]))
def test_decode_respects_random_masks(seed, mode):
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in rng.integers(1, 5, size=4))
    _, space, counts = tiny_space(sizes)
    unobs = [k for k in counts if rng.random() < 0.4]
    _, space, _ = tiny_space(sizes, unobserved=unobs)
    z = rng.normal(scale=4, size=(6, space.C))
    z[:, ~space.observed] = 100.0
    for pred in decode(z, space, mode, tau=0.0):
        for fid, (v, conf) in pred.items():
            assert space.observed[space.class_of[(fid, v)]]
            assert 0 < conf <= 1
        for fid in space.feature_ids:
            sl = space.feature_slice[fid]
            assert (fid in pred) == bool(space.observed[sl.start:sl.stop].any())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-50, 50))
def test_decode_shift_invariant_under_softmax(seed, shift):
    rng = np.random.default_rng(seed)
    _, space, _ = tiny_space((3, 4))
    z = rng.normal(size=(3, space.C))
    z2 = z.copy()
    z2[:, 3:] += shift
    a = decode(z, space, MULTITASK, tau=0.0)
    b = decode(z2, space, MULTITASK, tau=0.0)
    assert [{k: v[0] for k, v in p.items()} for p in a] == [{k: v[0] for k, v in p.items()} for p in b]


def test_score_cases():
    c = score([{"f": (0, 0.9)}, {"f": (1, 0.9)}, {}, {"f": (2, 0.9)}],
              [{"f": 0}, {"f": 0}, {"f": 0}, {}], ["f"], ["a", "b", "c", "d"])
    assert c.tp[:, 0].tolist() == [1, 0, 0, 0]
    assert c.fp[:, 0].tolist() == [0, 1, 0, 0]
    assert c.fn[:, 0].tolist() == [0, 1, 1, 0]


@given(st.lists(st.tuples(st.dictionaries(st.sampled_from("abc"), st.integers(0, 2)),
                          st.dictionaries(st.sampled_from("abcd"), st.integers(0, 2))), max_size=10))
def test_score_ignores_undefined_gold(pairs):
    preds = [{k: (v, 1.0) for k, v in p.items()} for p, _ in pairs]
    gold = [g for _, g in pairs]
    c = score(preds, gold, list("abcd"), ["x"] * len(pairs))
    for n, g in enumerate(gold):
        for j, f in enumerate("abcd"):
            total = c.tp[n, j] + c.fp[n, j] + c.fn[n, j]
            assert total == (0 if f not in g else 1 + c.fp[n, j])


def test_aggregate_hand_example():
    r = metrics_row("g", 1, 1, 1)
    assert (r.A, r.P, r.R) == (1 / 3, 0.5, 0.5)
    c = score([{"f1": (0, 1.0), "f2": (1, 1.0)}], [{"f1": 0, "f2": 0}], ["f1", "f2"], ["x"])
    row = aggregate(c, "overall").rows[0]
    assert (row.TP, row.FP, row.FN) == (1, 1, 1)
    assert row.N == 3 and row.A == pytest.approx(1 / 3) and row.P == 0.5 and row.R == 0.5


def fixture_counts():
    langs = list(GOLD)
    preds = [{k: (v, 0.9) for k, v in PRED[l].items()} for l in langs]
    return score(preds, [GOLD[l] for l in langs], FIDS, langs)


@pytest.mark.parametrize("grouping", ["chapter_type", "macro_area", "family", "feature"])
def test_partition_sums_to_overall(grouping):
    c = fixture_counts()
    overall = aggregate(c, "overall").rows[0]
    rows = aggregate(c, grouping, CATALOG, RECORDS).rows
    assert sum(r.N for r in rows) == overall.N
    for r in rows:
        assert r.P >= r.A and r.R >= r.A and r.N == r.TP + r.FP + r.FN


def test_ranked_views():
    rows = aggregate(fixture_counts(), "feature", CATALOG, RECORDS).rows
    assert [r.rank for r in rows] == list(range(1, len(rows) + 1))
    keys = [(-r.A, r.group) for r in rows]
    assert keys == sorted(keys)
    assert all(r.rank is None for r in aggregate(fixture_counts(), "macro_area", CATALOG, RECORDS).rows)


def test_aggregate_errors():
    with pytest.raises(ValueError, match="unknown grouping"):
        aggregate(fixture_counts(), "genus")
    with pytest.raises(ValueError):
        aggregate(fixture_counts(), "family")


def test_render():
    rep = aggregate(fixture_counts(), "family", CATALOG, RECORDS)
    text = render_report(rep)
    assert text == render_report(rep)
    assert text.decode().splitlines()[-1] == FOOTER
    delim = render_report(rep, "delimited").decode().splitlines()
    assert delim[0] == ",".join(REPORT_COLUMNS)
    assert len(delim) == 1 + len(rep.rows)
    empty = MetricsReport("family", ())
    assert render_report(empty, "delimited").decode() == ",".join(REPORT_COLUMNS) + "\n"
    assert render_report(empty).decode().split() == list(REPORT_COLUMNS)
    with pytest.raises(ValueError):
        render_report(rep, "html")


def test_merge_counts():
    c = fixture_counts()
    half = score([{}], [GOLD["aaa"]], FIDS, ["aaa"])
    merged = c.merge(half)
    assert merged.fn.sum() == c.fn.sum() + len(GOLD["aaa"])
    assert merged.languages[-1] == "aaa"
