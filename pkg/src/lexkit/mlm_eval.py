"""Upstream masked-language-model evaluation: mask a seeded random subset
of token positions in corpus chunks and score top-1 accuracy over the full
vocabulary, reported per sub-corpus plus an unweighted average row.

Every masked position becomes one fill request (mask only, no corruption
with random or original tokens), so accuracy is exactly the fraction of
masked positions whose top-1 prediction equals the original token id.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import TEST, Corpus
from .scorer import STANDALONE, ProtocolError, ScoreRequest, Scorer
from .util import SPAN_SENTINEL, ValidationError, keyed_u64


@dataclass
class MlmEvalConfig:
    mask_rate: float = 0.15
    max_chunks: int | None = 100
    seed: int = 0
    chunk_tokens: int = 128
    split: str = TEST

    def validate(self) -> None:
        if not 0.0 < self.mask_rate < 1.0:
            raise ValidationError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        if self.chunk_tokens < 1:
            raise ValidationError(f"chunk_tokens must be >= 1, got {self.chunk_tokens}")
        if self.max_chunks is not None and self.max_chunks < 1:
            raise ValidationError(f"max_chunks must be >= 1, got {self.max_chunks}")

    def to_dict(self) -> dict:
        return {
            "mask_rate": self.mask_rate,
            "max_chunks": self.max_chunks,
            "seed": self.seed,
            "chunk_tokens": self.chunk_tokens,
            "split": self.split,
        }


@dataclass
class SubcorpusTally:
    masked: int = 0
    correct: int = 0
    chunks: int = 0
    truncated_chunks: int = 0

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.masked if self.masked else None


@dataclass
class MlmReport:
    model_id: str
    config: MlmEvalConfig
    per_subcorpus: dict[str, SubcorpusTally] = field(default_factory=dict)

    @property
    def average(self) -> float | None:
        accs = [t.accuracy for t in self.per_subcorpus.values() if t.accuracy is not None]
        return sum(accs) / len(accs) if accs else None

    def to_dict(self) -> dict:
        rows = []
        for sub_id, t in self.per_subcorpus.items():
            rows.append(
                {
                    "subcorpus": sub_id,
                    "accuracy": t.accuracy,
                    "masked": t.masked,
                    "correct": t.correct,
                    "chunks": t.chunks,
                    "truncated_chunks": t.truncated_chunks,
                }
            )
        rows.append({"subcorpus": "Average", "accuracy": self.average})
        return {
            "model_id": self.model_id,
            "config": self.config.to_dict(),
            "rows": rows,
        }


def _word_chunks(text: str, chunk_tokens: int) -> list[str]:
    words = text.split()
    return [
        " ".join(words[i : i + chunk_tokens]) for i in range(0, len(words), chunk_tokens)
    ]


def _tokenize_fit(scorer: Scorer, text: str) -> tuple[list[int], list[str], bool]:
    """Tokenize a chunk, trimming trailing words until it fits the model
    limit. Returns (ids, strings, truncated)."""
    truncated = False
    while True:
        try:
            resp = scorer.tokenize(text, STANDALONE)
            return resp.token_ids, resp.token_strings, truncated
        except ProtocolError as exc:
            if "max_input_tokens" not in str(exc):
                raise
            words = text.split()
            if len(words) <= 1:
                raise
            text = " ".join(words[: max(1, int(len(words) * 0.8))])
            truncated = True


def _masked_context(strings: list[str], position: int) -> str:
    return "".join(strings[:position]) + SPAN_SENTINEL + "".join(strings[position + 1 :])


def _eval_chunk(
    scorer: Scorer, config: MlmEvalConfig, sub_id: str, doc_id: str, chunk_index: int, text: str
) -> tuple[int, int, bool]:
    """Score one chunk; returns (masked, correct, truncated)."""
    ids, strings, truncated = _tokenize_fit(scorer, text)
    n = len(ids)
    if n == 0:
        return 0, 0, truncated
    m = min(n, math.ceil(config.mask_rate * n))
    rng = np.random.default_rng(keyed_u64(config.seed, "mlm", sub_id, doc_id, str(chunk_index)))
    positions = sorted(int(p) for p in rng.choice(n, size=m, replace=False))
    correct = 0
    for pos in positions:
        request = ScoreRequest(
            context=_masked_context(strings, pos), num_masks=1, candidate_ids=[], topk=1
        )
        response = scorer.fill(request)
        if response.truncated:
            truncated = True
        top = response.positions[0].topk
        if top and top[0][0] == ids[pos]:
            correct += 1
    return m, correct, truncated


def eval_mlm(
    corpus: Corpus, config: MlmEvalConfig, scorer: Scorer, jobs: int = 1
) -> MlmReport:
    """Mask-and-predict over chunked documents of the configured split.

    Chunks are cut on whitespace at ``chunk_tokens`` words, capped at
    ``max_chunks`` per sub-corpus in document order. Masked positions are a
    seeded uniform draw of ceil(mask_rate * n) positions per chunk, so the
    whole report is a pure function of (corpus, config, scorer).
    """
    config.validate()
    model_id = scorer.info().model_id
    report = MlmReport(model_id=model_id, config=config)

    tasks: list[tuple[str, str, int, str]] = []
    for sub_id in corpus.subcorpus_ids:
        report.per_subcorpus[sub_id] = SubcorpusTally()
        taken = 0
        for record in corpus.iter_documents(subcorpus_id=sub_id, split=config.split):
            for ci, chunk in enumerate(_word_chunks(record.text, config.chunk_tokens)):
                if config.max_chunks is not None and taken >= config.max_chunks:
                    break
                tasks.append((sub_id, record.doc_id, ci, chunk))
                taken += 1
            if config.max_chunks is not None and taken >= config.max_chunks:
                break
    if not tasks:
        raise ValidationError(f"no documents in split {config.split!r} to evaluate")

    def run(task: tuple[str, str, int, str]) -> tuple[str, int, int, bool]:
        sub_id, doc_id, ci, chunk = task
        masked, correct, truncated = _eval_chunk(scorer, config, sub_id, doc_id, ci, chunk)
        return sub_id, masked, correct, truncated

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, tasks))
    else:
        outcomes = [run(t) for t in tasks]

    for sub_id, masked, correct, truncated in outcomes:
        tally = report.per_subcorpus[sub_id]
        tally.chunks += 1
        tally.masked += masked
        tally.correct += correct
        if truncated:
            tally.truncated_chunks += 1
    return report
