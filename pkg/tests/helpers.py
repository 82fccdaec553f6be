"""Shared builders for synthetic corpora, tasks, and scorers used across
the test modules. Everything is seeded through numpy generators so the
same inputs come out on every platform."""

from __future__ import annotations

import json

import numpy as np

from lexkit.probes import TermLabel, TermVocabulary
from lexkit.scorer import TableScorer

WORD_BANK = (
    "the court heard testimony from several witnesses regarding events of "
    "that year and concluded the proceedings after lengthy deliberation on "
    "all submitted evidence including documents correspondence and records "
    "presented by counsel for both parties during the trial sessions held"
).split()


def filler(rng: np.random.Generator, n: int) -> list[str]:
    return [WORD_BANK[int(i)] for i in rng.integers(0, len(WORD_BANK), size=n)]


def make_planted_docs(
    rng: np.random.Generator,
    surfaces: list[str],
    n_docs: int,
    prefix: str = "doc",
    min_words: int = 40,
    max_words: int = 90,
    plant_prob: float = 0.8,
):
    """Documents with at most one planted term each; returns (docs, plants)
    where plants maps doc_id to (surface, insertion word index)."""
    docs = []
    plants = {}
    for d in range(n_docs):
        words = filler(rng, int(rng.integers(min_words, max_words)))
        doc_id = f"{prefix}-{d:04d}"
        if rng.random() < plant_prob:
            surface = surfaces[int(rng.integers(0, len(surfaces)))]
            pos = int(rng.integers(3, len(words) - 3))
            words[pos:pos] = surface.split()
            plants[doc_id] = (surface, pos)
        docs.append({"id": doc_id, "text": " ".join(words)})
    return docs, plants


def crime_vocab(task_id="crimes") -> TermVocabulary:
    labels = [
        TermLabel("theft", "property"),
        TermLabel("arson", "property"),
        TermLabel("fraud", "financial"),
        TermLabel("embezzlement", "financial"),
        TermLabel("drug trafficking", "trafficking"),
        TermLabel("money laundering", "financial"),
    ]
    return TermVocabulary(task_id=task_id, labels=labels)


def write_vocab(path, vocab: TermVocabulary) -> None:
    path.write_text(json.dumps(vocab.to_dict()), encoding="utf-8")


def oracle_rank(scores: dict[int, float], gold_id: int) -> int:
    """Full sort with the same tie-break the engine promises: descending
    score, ascending id."""
    order = sorted(scores, key=lambda i: (-scores[i], i))
    return order.index(gold_id) + 1


def random_table_task(rng: np.random.Generator, tie_scores: bool = True):
    """A randomized label set with explicit per-position score tables.

    Returns (scorer, vocab_words, label_ids, tables). Scores are drawn from
    a small discrete grid when tie_scores is set, so equal scores actually
    occur and exercise the tie-break.
    """
    n_labels = int(rng.integers(2, 7))
    words = [f"w{j}" for j in range(n_labels)]
    lexicon = {}
    next_id = 0
    for w in words:
        k = int(rng.integers(1, 5))
        lexicon[w] = list(range(next_id, next_id + k))
        next_id += k
    all_ids = [i for ids in lexicon.values() for i in ids]
    max_k = max(len(ids) for ids in lexicon.values())
    if tie_scores:
        grid = np.linspace(-5.0, -0.5, num=6)
        tables = [
            {i: float(grid[int(rng.integers(0, len(grid)))]) for i in all_ids}
            for _ in range(max_k)
        ]
    else:
        tables = [
            {i: float(rng.normal()) for i in all_ids} for _ in range(max_k)
        ]
    scorer = TableScorer(tables=tables, lexicon=lexicon, vocab_size=next_id + 10)
    return scorer, words, lexicon, tables
