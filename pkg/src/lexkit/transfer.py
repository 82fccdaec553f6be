"""Embedding warm-start planning between two tokenizer vocabularies.

For every token string present verbatim (byte-equal, no normalization) in
both vocabularies, the new embedding row copies the old one; everything
else is marked for random initialization. The module only plans; applying
the plan to weight matrices belongs to the training framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .util import TransportError, ValidationError

COPY = "copy"
RANDOM_INIT = "random_init"


@dataclass(frozen=True)
class TransferEntry:
    new_id: int
    token: str
    action: str
    old_id: int | None = None

    def to_dict(self) -> dict:
        d = {"new_id": self.new_id, "token": self.token, "action": self.action}
        if self.action == COPY:
            d["old_id"] = self.old_id
        return d


@dataclass
class TransferPlan:
    entries: list[TransferEntry]
    n_copied: int
    n_random: int
    overlap_fraction: float

    def summary(self) -> dict:
        return {
            "n_copied": self.n_copied,
            "n_random": self.n_random,
            "new_vocab_size": len(self.entries),
            "overlap_fraction": self.overlap_fraction,
        }


def _check_vocab(name: str, vocab: dict[str, int]) -> None:
    if not vocab:
        raise ValidationError(f"{name} vocabulary is empty")
    ids = list(vocab.values())
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"{name} vocabulary has duplicate ids: {dupes}")


def plan_embedding_transfer(
    old_vocab: dict[str, int], new_vocab: dict[str, int]
) -> TransferPlan:
    """Map every new token to CopyFrom(old id) on exact string match, else
    RandomInit; entries ordered by new id."""
    _check_vocab("old", old_vocab)
    _check_vocab("new", new_vocab)
    entries = []
    n_copied = 0
    for token, new_id in sorted(new_vocab.items(), key=lambda kv: kv[1]):
        old_id = old_vocab.get(token)
        if old_id is not None:
            entries.append(TransferEntry(new_id=new_id, token=token, action=COPY, old_id=old_id))
            n_copied += 1
        else:
            entries.append(TransferEntry(new_id=new_id, token=token, action=RANDOM_INIT))
    return TransferPlan(
        entries=entries,
        n_copied=n_copied,
        n_random=len(entries) - n_copied,
        overlap_fraction=n_copied / len(entries),
    )


def _reject_duplicate_keys(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise ValidationError(f"duplicate token string in vocabulary: {key!r}")
        seen.add(key)
    return dict(pairs)


def load_vocab_json(path: str | Path) -> dict[str, int]:
    """Read a token-string to id map, rejecting duplicate token strings
    (a plain json.load would silently keep the last one)."""
    try:
        raw = json.loads(
            Path(path).read_text(encoding="utf-8"), object_pairs_hook=_reject_duplicate_keys
        )
    except OSError as exc:
        raise TransportError(f"cannot read vocabulary {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"vocabulary {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"vocabulary {path} must be a JSON object of token -> id")
    try:
        return {str(token): int(token_id) for token, token_id in raw.items()}
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"vocabulary {path} has a non-integer id: {exc}") from exc
