import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lexkit.evaluator import InstanceResult
from lexkit.probes import TermLabel, TermVocabulary
from lexkit.reporting import (
    FORMAT_CSV,
    FORMAT_JSON,
    FORMAT_MARKDOWN,
    TaskReport,
    aggregate,
    complexity_curve,
    curve_csv,
    rank_models,
    render,
    render_ranking_markdown,
)
from lexkit.util import ValidationError

_COUNTER = iter(range(10_000_000))


def make_result(gold, cluster, ranks, context_tokens=10):
    rr = [1.0 / r for r in ranks]
    return InstanceResult(
        instance_id=f"i{next(_COUNTER)}",
        k=len(ranks),
        ranks=list(ranks),
        rr=rr,
        instance_mrr=sum(rr) / len(rr),
        instance_p1=sum(1.0 for r in ranks if r == 1) / len(ranks),
        gold_surface=gold,
        cluster=cluster,
        context_tokens=context_tokens,
    )


def crime_vocab():
    return TermVocabulary(
        "crime",
        [
            TermLabel("theft", "property"),
            TermLabel("arson", "property"),
            TermLabel("drug trafficking", "trafficking"),
        ],
    )


# --- aggregate --------------------------------------------------------------


def test_macro_is_mean_of_label_means():
    vocab = TermVocabulary("t", [TermLabel("a", "x"), TermLabel("b", "x")])
    results = [
        make_result("a", "x", [1]),
        make_result("a", "x", [2]),
        make_result("b", "x", [1]),
    ]
    report = aggregate(results, vocab)
    assert report.per_label["a"].mean_mrr == 0.75
    assert report.per_label["b"].mean_mrr == 1.0
    assert report.macro_mrr == 0.875  # (0.75 + 1.0) / 2, not the pooled 5/6
    assert report.macro_p1 == 0.75
    assert report.missing_labels == []


def test_macro_matches_group_by_oracle():
    rng = np.random.default_rng(42)
    surfaces = [f"w{i}" for i in range(8)]
    vocab = TermVocabulary("t", [TermLabel(s, f"c{i % 3}") for i, s in enumerate(surfaces)])
    results = []
    for _ in range(300):
        idx = int(rng.integers(0, len(surfaces)))
        ranks = [int(r) for r in rng.integers(1, 6, size=int(rng.integers(1, 4)))]
        results.append(make_result(surfaces[idx], f"c{idx % 3}", ranks))
    report = aggregate(results, vocab)

    grouped: dict[str, list[float]] = {}
    for r in results:
        grouped.setdefault(r.gold_surface, []).append(r.instance_mrr)
    label_means = {s: sum(v) / len(v) for s, v in grouped.items()}
    expected_macro = sum(label_means.values()) / len(label_means)
    assert report.macro_mrr == pytest.approx(expected_macro, abs=1e-12)
    for s, m in label_means.items():
        assert report.per_label[s].mean_mrr == pytest.approx(m, abs=1e-12)


def test_macro_invariant_under_label_duplication():
    vocab = TermVocabulary("t", [TermLabel("a", "x"), TermLabel("b", "x")])
    base = [make_result("a", "x", [1]), make_result("a", "x", [4]), make_result("b", "x", [2])]
    doubled = base + [make_result("a", "x", [1]), make_result("a", "x", [4])]
    m0 = aggregate(base, vocab).macro_mrr
    m1 = aggregate(doubled, vocab).macro_mrr
    assert abs(m0 - m1) < 1e-12
    # the pooled per-instance mean does move, which is the point of macro
    pooled0 = sum(r.instance_mrr for r in base) / len(base)
    pooled1 = sum(r.instance_mrr for r in doubled) / len(doubled)
    assert abs(pooled0 - pooled1) > 0.01


def test_cluster_means_unweighted_vs_weighted():
    vocab = TermVocabulary("t", [TermLabel("a", "x"), TermLabel("b", "x")])
    results = [make_result("a", "x", [1])] + [make_result("b", "x", [100])] * 3
    unweighted = aggregate(results, vocab).per_cluster["x"]
    assert unweighted["mean_mrr"] == pytest.approx((1.0 + 0.01) / 2)
    weighted = aggregate(results, vocab, weighted_clusters=True).per_cluster["x"]
    assert weighted["mean_mrr"] == pytest.approx((1.0 + 3 * 0.01) / 4)


def test_unknown_gold_rejected():
    with pytest.raises(ValidationError, match="not in vocabulary"):
        aggregate([make_result("zzz", "x", [1])], crime_vocab())


def test_empty_results_rejected():
    with pytest.raises(ValidationError):
        aggregate([], crime_vocab())


def test_missing_labels_listed_and_excluded():
    results = [make_result("theft", "property", [1]), make_result("theft", "property", [2])]
    report = aggregate(results, crime_vocab())
    assert report.missing_labels == ["arson", "drug trafficking"]
    assert report.macro_mrr == 0.75  # mean over present labels only
    assert report.stats["n_labels"] == 3


def test_stats_fields():
    results = [
        make_result("theft", "property", [1], context_tokens=10),
        make_result("drug trafficking", "trafficking", [1, 2], context_tokens=30),
    ]
    report = aggregate(results, crime_vocab())
    assert report.stats["avg_input_tokens"] == 20.0
    assert report.stats["avg_tokens_per_label"] == 1.5  # k of 1 and 2
    assert report.per_label["drug trafficking"].k == 2


def test_report_round_trip():
    results = [make_result("theft", "property", [1]), make_result("arson", "property", [3])]
    report = aggregate(results, crime_vocab())
    again = TaskReport.from_dict(json.loads(render(report, FORMAT_JSON)))
    assert again.to_dict() == report.to_dict()


# --- complexity curve -------------------------------------------------------


def test_curve_buckets_by_k():
    results = []
    for k in (1, 2, 3):
        # all ranks equal k, so each bucket's mean MRR is exactly 1/k
        results += [make_result("a", "x", [k] * k)] * (4 - k)
    curve = complexity_curve(results)
    assert [b.k for b in curve] == [1, 2, 3]
    assert [b.n_instances for b in curve] == [3, 2, 1]
    for b in curve:
        assert b.mean_mrr == pytest.approx(1.0 / b.k)


def test_curve_recombines_to_micro_mean():
    rng = np.random.default_rng(7)
    results = [
        make_result("a", "x", [int(r) for r in rng.integers(1, 9, size=int(rng.integers(1, 5)))])
        for _ in range(200)
    ]
    curve = complexity_curve(results)
    total = sum(b.n_instances for b in curve)
    weighted = sum(b.mean_mrr * b.n_instances for b in curve) / total
    micro = sum(r.instance_mrr for r in results) / len(results)
    assert total == 200
    assert weighted == pytest.approx(micro, abs=1e-12)


def test_curve_csv_parses_back():
    results = [make_result("a", "x", [1]), make_result("a", "x", [2, 3])]
    text = curve_csv(complexity_curve(results))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["k", "mean_mrr", "n_instances"]
    parsed = [(int(k), float(m), int(n)) for k, m, n in rows[1:]]
    assert parsed == [(1, 1.0, 1), (2, (0.5 + 1 / 3) / 2, 1)]


# --- model ranking ----------------------------------------------------------


def test_rank_models_shared_ranks_example():
    table = [
        ("m1", 81.8),
        ("m2", 78.7),
        ("m3", 78.7),
        ("m4", 73.8),
        ("m5", 70.1),
        ("m6", 68.9),
        ("m7", 63.5),
    ]
    ranking = rank_models(table)
    assert [r for _, _, r in ranking.entries] == [1, 2, 2, 4, 5, 6, 7]
    assert [m for m, _, _ in ranking.entries] == [f"m{i}" for i in range(1, 8)]


def test_rank_models_pair():
    ranking = rank_models({"low": 10.0, "high": 20.0})
    assert ranking.entries == [("high", 20.0, 1), ("low", 10.0, 2)]


def test_rank_models_tie_tolerance():
    near = rank_models({"a": 50.0, "b": 50.0 + 5e-10})
    assert [r for _, _, r in near.entries] == [1, 1]
    apart = rank_models({"a": 50.0, "b": 50.0 + 5e-9})
    assert [r for _, _, r in apart.entries] == [1, 2]


def test_rank_models_needs_two():
    with pytest.raises(ValidationError):
        rank_models({"only": 1.0})


@settings(max_examples=100)
@given(
    st.lists(st.integers(0, 10_000), min_size=2, max_size=12, unique=True),
    st.floats(0.5, 2.0),
    st.floats(-10.0, 10.0),
)
def test_rank_models_matches_sort_oracle_and_affine_invariance(values, scale, shift):
    table = {f"m{i}": float(v) for i, v in enumerate(values)}
    ranking = rank_models(table)
    order = sorted(table, key=lambda m: (-table[m], m))
    assert [m for m, _, _ in ranking.entries] == order
    # distinct integer averages: rank is 1 + number of strictly better models
    for model_id, avg, rank in ranking.entries:
        assert rank == 1 + sum(1 for v in table.values() if v > avg)
    rescaled = rank_models({m: scale * v + shift for m, v in table.items()})
    assert [(m, r) for m, _, r in rescaled.entries] == [
        (m, r) for m, _, r in ranking.entries
    ]


def test_ranking_markdown():
    text = render_ranking_markdown(rank_models({"a": 81.8, "b": 63.5}))
    assert text.splitlines() == [
        "| Model | Average | Rank |",
        "|---|---:|---:|",
        "| a | 81.8 | 1 |",
        "| b | 63.5 | 2 |",
    ]


# --- rendering --------------------------------------------------------------


def _small_report():
    results = [
        make_result("theft", "property", [1]),
        make_result("theft", "property", [2]),
        make_result("drug trafficking", "trafficking", [1, 2]),
    ]
    return aggregate(results, crime_vocab())


def test_markdown_snapshot():
    expected = """## crime

| Label | Cluster | Instances | MRR | P@1 |
|---|---|---:|---:|---:|
| theft | property | 2 | 0.750 | 0.500 |
| drug trafficking | trafficking | 1 | 0.750 | 0.500 |
| **Macro** |  |  | 0.750 | 0.500 |

| Cluster | Labels | MRR | P@1 |
|---|---:|---:|---:|
| property | 1 | 0.750 | 0.500 |
| trafficking | 1 | 0.750 | 0.500 |

| #T | #L | #T/L |
|---:|---:|---:|
| 10.0 | 3 | 1.50 |

Labels without instances: arson
"""
    assert render(_small_report(), FORMAT_MARKDOWN) == expected


def test_markdown_single_cluster_omits_cluster_table():
    vocab = TermVocabulary("t", [TermLabel("a", "x"), TermLabel("b", "x")])
    text = render(aggregate([make_result("a", "x", [1])], vocab), FORMAT_MARKDOWN)
    assert "| Cluster | Labels |" not in text
    assert "| **Macro** |" in text


def test_csv_render_shape_and_exact_floats():
    text = render(_small_report(), FORMAT_CSV)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["label", "cluster", "n_instances", "k", "mean_mrr", "mean_p1"]
    assert rows[-1][0] == "__macro__"
    assert float(rows[-1][4]) == 0.75
    by_label = {r[0]: r for r in rows[1:-1]}
    assert float(by_label["drug trafficking"][4]) == 0.75
    assert by_label["theft"][2:4] == ["2", "1"]


def test_render_unknown_format():
    with pytest.raises(ValidationError):
        render(_small_report(), "yaml")
