"""Cloze probe construction: scan corpus documents for verbatim vocabulary
terms, excise the matched span, and emit masked instances.

A probe instance is a window of document text with the term replaced by the
``<|span|>`` sentinel. Expansion of the sentinel into k model-specific mask
tokens happens at evaluation time; the builder stays tokenizer-agnostic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import TEST, Corpus
from .util import SPAN_SENTINEL, TransportError, ValidationError, keyed_u64

CASE_SENSITIVE = "case_sensitive"
CASE_INSENSITIVE = "case_insensitive"


@dataclass(frozen=True)
class TermLabel:
    surface: str
    cluster: str


@dataclass
class TermVocabulary:
    task_id: str
    labels: list[TermLabel]
    match_policy: str = CASE_SENSITIVE

    def validate(self) -> None:
        if not self.task_id:
            raise ValidationError("task_id must be non-empty")
        if self.match_policy not in (CASE_SENSITIVE, CASE_INSENSITIVE):
            raise ValidationError(f"unknown match_policy: {self.match_policy}")
        if len(self.labels) < 2:
            raise ValidationError("vocabulary needs at least 2 labels")
        surfaces = [l.surface for l in self.labels]
        folded = [self._fold(s) for s in surfaces]
        if len(set(folded)) != len(folded):
            dupes = sorted({s for s in folded if folded.count(s) > 1})
            raise ValidationError(f"duplicate surfaces in vocabulary: {dupes}")
        for l in self.labels:
            if not l.surface:
                raise ValidationError("empty surface in vocabulary")
            if not l.cluster:
                raise ValidationError(f"label {l.surface!r} has an empty cluster")

    def _fold(self, s: str) -> str:
        return s.casefold() if self.match_policy == CASE_INSENSITIVE else s

    @property
    def surfaces(self) -> list[str]:
        return [l.surface for l in self.labels]

    def cluster_of(self, surface: str) -> str:
        for l in self.labels:
            if self._fold(l.surface) == self._fold(surface):
                return l.cluster
        raise KeyError(surface)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "match_policy": self.match_policy,
            "labels": [{"surface": l.surface, "cluster": l.cluster} for l in self.labels],
        }


def load_vocabulary(path: str | Path) -> TermVocabulary:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise TransportError(f"cannot read vocabulary {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"vocabulary {path} is not valid JSON: {exc}") from exc
    vocab = TermVocabulary(
        task_id=raw.get("task_id", ""),
        labels=[TermLabel(l["surface"], l.get("cluster", "all")) for l in raw.get("labels", [])],
        match_policy=raw.get("match_policy", CASE_SENSITIVE),
    )
    vocab.validate()
    return vocab


@dataclass
class ProbeInstance:
    instance_id: str
    task_id: str
    context: str
    gold_surface: str
    cluster: str
    source_doc: str
    source_subcorpus: str
    char_offset: int

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "task_id": self.task_id,
            "context": self.context,
            "gold_surface": self.gold_surface,
            "cluster": self.cluster,
            "source_doc": self.source_doc,
            "source_subcorpus": self.source_subcorpus,
            "char_offset": self.char_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeInstance":
        return cls(
            instance_id=d["instance_id"],
            task_id=d["task_id"],
            context=d["context"],
            gold_surface=d["gold_surface"],
            cluster=d.get("cluster", "all"),
            source_doc=d.get("source_doc", ""),
            source_subcorpus=d.get("source_subcorpus", ""),
            char_offset=int(d.get("char_offset", -1)),
        )


def _term_pattern(surface: str, match_policy: str) -> re.Pattern:
    # Whole-word: no word character may directly precede or follow the span.
    flags = re.IGNORECASE if match_policy == CASE_INSENSITIVE else 0
    return re.compile(r"(?<!\w)" + re.escape(surface) + r"(?!\w)", flags)


def find_term_matches(text: str, vocab: TermVocabulary) -> list[tuple[int, int, TermLabel]]:
    """All whole-word vocabulary matches with overlaps resolved longest-first.

    A match contained in or overlapping a longer match is dropped, so nested
    vocabularies ("theft" vs "identity theft") attribute each span to one
    term only. Returned sorted by start offset.
    """
    raw: list[tuple[int, int, TermLabel]] = []
    for label in vocab.labels:
        for m in _term_pattern(label.surface, vocab.match_policy).finditer(text):
            raw.append((m.start(), m.end(), label))
    raw.sort(key=lambda t: (-(t[1] - t[0]), t[0]))
    kept: list[tuple[int, int, TermLabel]] = []
    for start, end, label in raw:
        if all(end <= ks or start >= ke for ks, ke, _ in kept):
            kept.append((start, end, label))
    kept.sort(key=lambda t: t[0])
    return kept


def _window_bounds(text: str, start: int, end: int, window_chars: int) -> tuple[int, int]:
    """Word-boundary-respecting window of <= window_chars centered on the span."""
    if len(text) <= window_chars:
        return 0, len(text)
    budget = max(0, window_chars - (end - start))
    left = max(0, start - budget // 2)
    right = min(len(text), end + (budget - budget // 2))
    if left > 0 and not text[left - 1].isspace():
        ws = next((i for i in range(left, start) if text[i].isspace()), None)
        left = ws + 1 if ws is not None else start
    if right < len(text) and not text[right].isspace():
        ws = next((i for i in range(right - 1, end - 1, -1) if text[i].isspace()), None)
        right = ws if ws is not None else end
    while left < start and text[left].isspace():
        left += 1
    while right > end and text[right - 1].isspace():
        right -= 1
    return left, right


@dataclass
class BuildReport:
    instances: list[ProbeInstance]
    per_label_found: dict[str, int]
    missing_labels: list[str]
    docs_scanned: int = 0
    docs_skipped_multi: int = 0
    docs_skipped_sentinel: int = 0

    def coverage_summary(self) -> dict:
        return {
            "docs_scanned": self.docs_scanned,
            "docs_skipped_multi_occurrence": self.docs_skipped_multi,
            "docs_skipped_sentinel_collision": self.docs_skipped_sentinel,
            "instances": len(self.instances),
            "per_label_found": dict(sorted(self.per_label_found.items())),
            "missing_labels": self.missing_labels,
        }


def build_probes(
    corpus: Corpus,
    vocab: TermVocabulary,
    window_chars: int = 2000,
    max_per_label: int = 200,
    seed: int = 0,
    split: str = TEST,
) -> BuildReport:
    """Scan the corpus split for single-occurrence term hits and emit probe
    instances, capped per label by seeded reservoir sampling.

    A document in which any single term matches twice is skipped outright;
    a document with several distinct terms yields one instance per term.
    Output ordering is canonical (task, subcorpus, doc, offset) regardless
    of scan order.
    """
    vocab.validate()
    if max_per_label < 1:
        raise ValidationError(f"max_per_label must be >= 1, got {max_per_label}")

    candidates: dict[str, list[ProbeInstance]] = {s: [] for s in vocab.surfaces}
    reservoirs: dict[str, _Reservoir] = {
        s: _Reservoir(max_per_label, seed=keyed_u64(seed, vocab.task_id, s))
        for s in vocab.surfaces
    }
    found_counts = {s: 0 for s in vocab.surfaces}
    docs_scanned = skipped_multi = skipped_sentinel = 0

    for record in corpus.iter_documents(split=split):
        docs_scanned += 1
        text = record.text
        if SPAN_SENTINEL in text:
            skipped_sentinel += 1
            continue
        matches = find_term_matches(text, vocab)
        if not matches:
            continue
        per_surface: dict[str, int] = {}
        for _, _, label in matches:
            per_surface[label.surface] = per_surface.get(label.surface, 0) + 1
        if any(n >= 2 for n in per_surface.values()):
            skipped_multi += 1
            continue
        for start, end, label in matches:
            left, right = _window_bounds(text, start, end, window_chars)
            context = text[left:start] + SPAN_SENTINEL + text[end:right]
            # Window may have pulled in another occurrence... it cannot for the
            # gold term (single occurrence in the whole doc), but re-check to
            # keep the no-leakage invariant independent of the skip policy.
            pattern = _term_pattern(label.surface, vocab.match_policy)
            if pattern.search(text[left:start]) or pattern.search(text[end:right]):
                continue
            instance = ProbeInstance(
                instance_id=f"{vocab.task_id}:{record.subcorpus_id}:{record.doc_id}:{start}",
                task_id=vocab.task_id,
                context=context,
                gold_surface=label.surface,
                cluster=label.cluster,
                source_doc=record.doc_id,
                source_subcorpus=record.subcorpus_id,
                char_offset=start,
            )
            found_counts[label.surface] += 1
            reservoirs[label.surface].offer(instance)

    if docs_scanned == 0:
        raise ValidationError(f"corpus {split!r} split is empty")

    for surface, reservoir in reservoirs.items():
        candidates[surface] = reservoir.items

    instances = [inst for insts in candidates.values() for inst in insts]
    instances.sort(key=lambda i: (i.task_id, i.source_subcorpus, i.source_doc, i.char_offset))
    missing = sorted(s for s, n in found_counts.items() if n == 0)
    return BuildReport(
        instances=instances,
        per_label_found=found_counts,
        missing_labels=missing,
        docs_scanned=docs_scanned,
        docs_skipped_multi=skipped_multi,
        docs_skipped_sentinel=skipped_sentinel,
    )


class _Reservoir:
    """Algorithm-R reservoir with a dedicated seeded generator per label."""

    def __init__(self, capacity: int, seed: int):
        self.capacity = capacity
        self.items: list = []
        self._seen = 0
        self._rng = np.random.default_rng(seed)

    def offer(self, item) -> None:
        if self._seen < self.capacity:
            self.items.append(item)
        else:
            j = int(self._rng.integers(0, self._seen + 1))
            if j < self.capacity:
                self.items[j] = item
        self._seen += 1


@dataclass
class ValidationReport:
    n_instances: int
    violations: list[tuple[str, str]]
    per_label_counts: dict[str, int]
    missing_labels: list[str]
    avg_context_tokens: float
    n_labels: int
    avg_label_words: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "ok": self.ok,
            "violations": [list(v) for v in self.violations],
            "per_label_counts": dict(sorted(self.per_label_counts.items())),
            "missing_labels": self.missing_labels,
            "stats": {
                "avg_context_tokens": self.avg_context_tokens,
                "n_labels": self.n_labels,
                "avg_label_words": self.avg_label_words,
            },
        }


def validate_probes(
    instances: Iterable[ProbeInstance],
    vocab: TermVocabulary,
    corpus: Corpus | None = None,
) -> ValidationReport:
    """Check every instance invariant and report per-label counts plus
    benchmark-style statistics (average input tokens, label count).

    With a corpus supplied, also verifies the substring round-trip of every
    instance against its source document.
    """
    vocab.validate()
    folded_surfaces = {vocab._fold(s): s for s in vocab.surfaces}
    violations: list[tuple[str, str]] = []
    counts = {s: 0 for s in vocab.surfaces}
    token_total = 0
    instances = list(instances)

    doc_texts: dict[tuple[str, str], str] = {}
    if corpus is not None:
        needed = {(i.source_subcorpus, i.source_doc) for i in instances}
        for record in corpus.iter_documents():
            key = (record.subcorpus_id, record.doc_id)
            if key in needed:
                doc_texts[key] = record.text

    for inst in instances:
        n_sentinels = inst.context.count(SPAN_SENTINEL)
        if n_sentinels != 1:
            violations.append((inst.instance_id, f"expected 1 sentinel, found {n_sentinels}"))
        gold_key = vocab._fold(inst.gold_surface)
        if gold_key not in folded_surfaces:
            violations.append((inst.instance_id, f"gold {inst.gold_surface!r} not in vocabulary"))
        else:
            counts[folded_surfaces[gold_key]] += 1
            expected_cluster = vocab.cluster_of(inst.gold_surface)
            if inst.cluster != expected_cluster:
                violations.append(
                    (inst.instance_id, f"cluster {inst.cluster!r} != {expected_cluster!r}")
                )
            if n_sentinels == 1:
                pattern = _term_pattern(inst.gold_surface, vocab.match_policy)
                left, right = inst.context.split(SPAN_SENTINEL)
                if pattern.search(left) or pattern.search(right):
                    violations.append((inst.instance_id, "gold surface leaks into context"))
        if corpus is not None and n_sentinels == 1:
            text = doc_texts.get((inst.source_subcorpus, inst.source_doc))
            restored = inst.context.replace(SPAN_SENTINEL, inst.gold_surface)
            if vocab.match_policy == CASE_INSENSITIVE:
                found = text is not None and restored.casefold() in text.casefold()
            else:
                found = text is not None and restored in text
            if not found:
                violations.append((inst.instance_id, "context does not round-trip to source doc"))
        token_total += len(inst.context.split())

    n = len(instances)
    words_per_label = [len(s.split()) for s in vocab.surfaces]
    return ValidationReport(
        n_instances=n,
        violations=violations,
        per_label_counts=counts,
        missing_labels=sorted(s for s, c in counts.items() if c == 0),
        avg_context_tokens=token_total / n if n else 0.0,
        n_labels=len(vocab.labels),
        avg_label_words=sum(words_per_label) / len(words_per_label),
    )
