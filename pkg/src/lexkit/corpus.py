"""Manifest-driven ingestion, splitting, chunking, and statistics for
multi-subcorpus text collections.

Input documents live in JSONL files (one object per line with ``id``,
``text``, and optionally ``split``). A manifest JSON names the sub-corpora
and their files. Splits are either taken from the input or derived
deterministically from a keyed hash of the document id, so re-runs always
agree.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .util import TransportError, ValidationError, keyed_u64

log = logging.getLogger(__name__)

TRAIN = "train"
TEST = "test"

DEFAULT_TEST_FRACTION = 0.1
DEFAULT_SPLIT_SEED = 0


@dataclass(frozen=True)
class ManifestEntry:
    subcorpus_id: str
    path: str
    jurisdiction: str = ""
    doc_type: str = ""


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    version: str = "1"

    def validate(self, base_dir: str | Path | None = None) -> None:
        ids = [e.subcorpus_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate subcorpus ids in manifest: {dupes}")
        for entry in self.entries:
            path = _resolve(entry.path, base_dir)
            if not path.is_file():
                raise TransportError(f"manifest path does not exist: {entry.path}")


def _resolve(path: str, base_dir: str | Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse and validate a manifest file; relative entry paths resolve
    against the manifest's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise TransportError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from exc
    entries = []
    for obj in raw.get("entries", []):
        try:
            entries.append(
                ManifestEntry(
                    subcorpus_id=obj["subcorpus_id"],
                    path=str(_resolve(obj["path"], path.parent)),
                    jurisdiction=obj.get("jurisdiction", ""),
                    doc_type=obj.get("doc_type", ""),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"manifest entry missing field {exc}: {obj}") from exc
    manifest = CorpusManifest(entries=tuple(entries), version=str(raw.get("version", "1")))
    manifest.validate()
    return manifest


@dataclass
class DocumentRecord:
    doc_id: str
    subcorpus_id: str
    text: str
    split: str
    approx_tokens: int


def hash_split(doc_id: str, seed: int, test_fraction: float) -> str:
    """Deterministic split decision: keyed 64-bit hash of the doc id mapped
    to [0, 1) and compared against the test fraction."""
    u = keyed_u64(seed, "split", doc_id) / 2.0**64
    return TEST if u < test_fraction else TRAIN


class Corpus:
    """Streaming handle over the documents named by a manifest.

    Documents are re-read from disk on each iteration (nothing is held in
    memory), so independent sub-corpus streams may be consumed concurrently.
    Malformed lines are skipped and counted unless ``strict`` is set.
    """

    def __init__(
        self,
        manifest: CorpusManifest,
        strict: bool = False,
        test_fraction: float = DEFAULT_TEST_FRACTION,
        split_seed: int = DEFAULT_SPLIT_SEED,
        honor_input_splits: bool = True,
    ):
        self.manifest = manifest
        self.strict = strict
        self.test_fraction = test_fraction
        self.split_seed = split_seed
        self.honor_input_splits = honor_input_splits
        self.malformed_counts: dict[str, int] = {e.subcorpus_id: 0 for e in manifest.entries}

    @property
    def subcorpus_ids(self) -> list[str]:
        return [e.subcorpus_id for e in self.manifest.entries]

    def with_splits(self, test_fraction: float, seed: int) -> "Corpus":
        if not 0.0 < test_fraction < 1.0:
            raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
        return Corpus(
            self.manifest,
            strict=self.strict,
            test_fraction=test_fraction,
            split_seed=seed,
            honor_input_splits=self.honor_input_splits,
        )

    def _record(self, obj: dict, subcorpus_id: str, seen: set[str]) -> DocumentRecord | None:
        doc_id = obj.get("id")
        text = obj.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise ValueError("missing or empty 'id'")
        if not isinstance(text, str) or not text:
            raise ValueError("missing or empty 'text'")
        if doc_id in seen:
            raise ValueError(f"duplicate doc id {doc_id!r}")
        seen.add(doc_id)
        split = obj.get("split")
        if not (self.honor_input_splits and split in (TRAIN, TEST)):
            split = hash_split(doc_id, self.split_seed, self.test_fraction)
        return DocumentRecord(
            doc_id=doc_id,
            subcorpus_id=subcorpus_id,
            text=text,
            split=split,
            approx_tokens=len(text.split()),
        )

    def iter_documents(
        self, subcorpus_id: str | None = None, split: str | None = None
    ) -> Iterator[DocumentRecord]:
        entries = self.manifest.entries
        if subcorpus_id is not None:
            entries = tuple(e for e in entries if e.subcorpus_id == subcorpus_id)
            if not entries:
                raise ValidationError(f"unknown subcorpus id: {subcorpus_id}")
        for entry in entries:
            seen: set[str] = set()
            try:
                fh = open(entry.path, "r", encoding="utf-8")
            except OSError as exc:
                raise TransportError(f"cannot open {entry.path}: {exc}") from exc
            with fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        if not isinstance(obj, dict):
                            raise ValueError("line is not a JSON object")
                        record = self._record(obj, entry.subcorpus_id, seen)
                    except (json.JSONDecodeError, ValueError) as exc:
                        if self.strict:
                            raise ValidationError(
                                f"{entry.path}:{lineno}: malformed line ({exc})"
                            ) from exc
                        self.malformed_counts[entry.subcorpus_id] += 1
                        log.warning("%s:%d: skipping malformed line (%s)", entry.path, lineno, exc)
                        continue
                    if split is not None and record.split != split:
                        continue
                    yield record


def ingest(manifest: CorpusManifest, strict: bool = False) -> Corpus:
    manifest.validate()
    return Corpus(manifest, strict=strict)


@dataclass
class SubcorpusStats:
    doc_count: int = 0
    token_count: int = 0
    share: float = 0.0


@dataclass
class CorpusStats:
    per_subcorpus: dict[str, SubcorpusStats] = field(default_factory=dict)
    total_docs: int = 0
    total_tokens: int = 0
    shares_defined: bool = False

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        # Commutative/associative partial aggregation for parallel stats.
        merged = CorpusStats()
        for stats in (self, other):
            for sub_id, s in stats.per_subcorpus.items():
                tgt = merged.per_subcorpus.setdefault(sub_id, SubcorpusStats())
                tgt.doc_count += s.doc_count
                tgt.token_count += s.token_count
        merged.total_docs = sum(s.doc_count for s in merged.per_subcorpus.values())
        merged.total_tokens = sum(s.token_count for s in merged.per_subcorpus.values())
        merged._finish()
        return merged

    def _finish(self) -> None:
        self.shares_defined = self.total_tokens > 0
        for s in self.per_subcorpus.values():
            s.share = s.token_count / self.total_tokens if self.shares_defined else 0.0

    def to_dict(self) -> dict:
        return {
            "per_subcorpus": {
                sub_id: {"doc_count": s.doc_count, "token_count": s.token_count, "share": s.share}
                for sub_id, s in self.per_subcorpus.items()
            },
            "total_docs": self.total_docs,
            "total_tokens": self.total_tokens,
            "shares_defined": self.shares_defined,
        }

    def to_markdown(self) -> str:
        lines = [
            "| Sub-Corpus | # Documents | # Tokens | Percentage (%) |",
            "|---|---:|---:|---:|",
        ]
        for sub_id, s in self.per_subcorpus.items():
            lines.append(
                f"| {sub_id} | {s.doc_count} | {s.token_count} | {s.share * 100:.1f} |"
            )
        pct = "100.0" if self.shares_defined else "n/a"
        lines.append(f"| **Total** | {self.total_docs} | {self.total_tokens} | {pct} |")
        return "\n".join(lines) + "\n"


def compute_stats(corpus: Corpus) -> CorpusStats:
    """Exact per-subcorpus document and whitespace-token counts, with token
    shares normalized over the corpus total."""
    stats = CorpusStats()
    for sub_id in corpus.subcorpus_ids:
        stats.per_subcorpus[sub_id] = SubcorpusStats()
    for record in corpus.iter_documents():
        s = stats.per_subcorpus[record.subcorpus_id]
        s.doc_count += 1
        s.token_count += record.approx_tokens
    stats.total_docs = sum(s.doc_count for s in stats.per_subcorpus.values())
    stats.total_tokens = sum(s.token_count for s in stats.per_subcorpus.values())
    stats._finish()
    return stats


def assign_splits(corpus: Corpus, test_fraction: float, seed: int) -> Corpus:
    """Return a corpus view whose documents are deterministically split by
    (doc_id, seed); input-provided splits still win when present."""
    return corpus.with_splits(test_fraction, seed)


def chunk_text(text: str, window_chars: int) -> list[str]:
    """Cut a document into whitespace-boundary chunks of at most
    ``window_chars`` characters.

    Joining the chunks with single spaces preserves the document's
    whitespace token sequence. A single token longer than the window is
    emitted alone (oversized) rather than split mid-word.
    """
    words = text.split()
    chunks: list[str] = []
    current: list[str] = []
    length = 0
    for word in words:
        added = len(word) if not current else length + 1 + len(word)
        if current and added > window_chars:
            chunks.append(" ".join(current))
            current = [word]
            length = len(word)
        else:
            current.append(word)
            length = added
    if current:
        chunks.append(" ".join(current))
    return chunks


def chunk_stream(
    corpus: Corpus,
    window_chars: int,
    split: str | None = None,
    subcorpus_id: str | None = None,
) -> Iterator[tuple[str, str]]:
    """Yield (subcorpus_id, chunk) pairs over the filtered document stream."""
    if window_chars < 200:
        raise ValidationError(f"window_chars must be >= 200, got {window_chars}")
    for record in corpus.iter_documents(subcorpus_id=subcorpus_id, split=split):
        for chunk in chunk_text(record.text, window_chars):
            yield record.subcorpus_id, chunk
