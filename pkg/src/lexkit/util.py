"""Shared plumbing: error classes, keyed hashing, output headers, JSONL I/O."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator


# Placeholder standing in for one masked span; expanded to k model-specific
# mask tokens only inside a scorer, so it must never collide with real text.
SPAN_SENTINEL = "<|span|>"


class LexkitError(Exception):
    """Base class; exit_code drives the CLI's exit status."""

    exit_code = 1


class ValidationError(LexkitError):
    """Bad inputs or violated preconditions (CLI exit 1)."""

    exit_code = 1


class TransportError(LexkitError):
    """I/O and scorer-protocol failures (CLI exit 2)."""

    exit_code = 2


def keyed_u64(key: int | str, *parts: str) -> int:
    """Keyed 64-bit hash, stable across runs and platforms."""
    h = hashlib.blake2b(key=str(key).encode("utf-8"), digest_size=8)
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def text_digest(text: str) -> int:
    """Unkeyed 64-bit digest of a text, used to seed content-addressed RNG streams."""
    d = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(d, "little")


def config_digest(config: dict[str, Any]) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def make_header(kind: str, config: dict[str, Any], version: str) -> dict[str, Any]:
    """Self-describing first record for every output file."""
    return {
        "_lexkit_header": True,
        "kind": kind,
        "tool_version": version,
        "seed": config.get("seed"),
        "config": config,
        "config_digest": config_digest(config),
    }


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(", ", ": "), ensure_ascii=False)


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]], header: dict[str, Any] | None = None) -> int:
    """Write rows as one JSON object per line; returns the number of data rows."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(dump_json(header) + "\n")
        for row in rows:
            fh.write(dump_json(row) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Yield data rows, skipping a leading header record if present."""
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if i == 0 and isinstance(obj, dict) and obj.get("_lexkit_header"):
                continue
            yield obj


def read_jsonl_header(path: str | Path) -> dict[str, Any] | None:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first:
        return None
    obj = json.loads(first)
    if isinstance(obj, dict) and obj.get("_lexkit_header"):
        return obj
    return None
