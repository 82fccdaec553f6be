"""Wire contract to masked-LM scorers, plus deterministic in-process scorers.

The engine never tokenizes text itself. It ships a context string holding
the ``<|span|>`` sentinel and asks a scorer to (a) tokenize label surfaces
and (b) fill the span with k mask tokens and return per-position
log-probabilities. Two transports are provided (HTTP+JSON and line-framed
JSON over stdio) along with two pure in-process scorers used by tests:
a table scorer (scores read off an explicit table) and a hash scorer
(scores derived from a keyed hash, so they look random but never change).
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .util import SPAN_SENTINEL, TransportError, ValidationError, keyed_u64

STANDALONE = "standalone"
WITH_LEADING_SPACE = "with_leading_space"
TOKENIZE_MODES = (STANDALONE, WITH_LEADING_SPACE)


class ProtocolError(TransportError):
    """The scorer rejected a request or produced a malformed response."""


# ---------------------------------------------------------------------------
# wire types


@dataclass
class ScorerInfo:
    model_id: str
    vocab_size: int
    mask_token: str
    max_input_tokens: int

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ProtocolError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not self.mask_token:
            raise ProtocolError("mask_token must be non-empty")
        if self.max_input_tokens < 1:
            raise ProtocolError(f"max_input_tokens must be positive, got {self.max_input_tokens}")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "vocab_size": self.vocab_size,
            "mask_token": self.mask_token,
            "max_input_tokens": self.max_input_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerInfo":
        try:
            info = cls(
                model_id=str(d["model_id"]),
                vocab_size=int(d["vocab_size"]),
                mask_token=str(d["mask_token"]),
                max_input_tokens=int(d["max_input_tokens"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed scorer info: {exc}") from exc
        info.validate()
        return info


@dataclass
class TokenizeResponse:
    token_ids: list[int]
    token_strings: list[str]

    def validate(self) -> None:
        if len(self.token_ids) != len(self.token_strings):
            raise ProtocolError(
                f"token_ids and token_strings lengths differ: "
                f"{len(self.token_ids)} vs {len(self.token_strings)}"
            )

    def to_dict(self) -> dict:
        return {"token_ids": list(self.token_ids), "token_strings": list(self.token_strings)}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizeResponse":
        try:
            resp = cls(
                token_ids=[int(i) for i in d["token_ids"]],
                token_strings=[str(s) for s in d["token_strings"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed tokenize response: {exc}") from exc
        resp.validate()
        return resp


@dataclass
class ScoreRequest:
    context: str
    num_masks: int
    candidate_ids: list[int] = field(default_factory=list)
    topk: int = 0

    def validate(self) -> None:
        n = self.context.count(SPAN_SENTINEL)
        if n != 1:
            raise ProtocolError(f"context must contain the sentinel exactly once, found {n}")
        if self.num_masks < 1:
            raise ProtocolError(f"num_masks must be >= 1, got {self.num_masks}")
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise ProtocolError("candidate_ids must be unique")
        if any(c < 0 for c in self.candidate_ids):
            raise ProtocolError("candidate_ids must be non-negative")
        if self.topk < 0:
            raise ProtocolError(f"topk must be >= 0, got {self.topk}")

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "num_masks": self.num_masks,
            "candidate_ids": list(self.candidate_ids),
            "topk": self.topk,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRequest":
        try:
            req = cls(
                context=str(d["context"]),
                num_masks=int(d["num_masks"]),
                candidate_ids=[int(c) for c in d.get("candidate_ids", [])],
                topk=int(d.get("topk", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed score request: {exc}") from exc
        req.validate()
        return req


@dataclass
class PositionScores:
    candidate_logprobs: dict[int, float]
    topk: list[tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "candidate_logprobs": {str(k): v for k, v in self.candidate_logprobs.items()},
            "topk": [[i, lp] for i, lp in self.topk],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PositionScores":
        try:
            return cls(
                candidate_logprobs={int(k): float(v) for k, v in d["candidate_logprobs"].items()},
                topk=[(int(i), float(lp)) for i, lp in d.get("topk", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed position scores: {exc}") from exc


@dataclass
class ScoreResponse:
    positions: list[PositionScores]
    truncated: bool = False

    def validate(self, request: ScoreRequest | None = None) -> None:
        if request is not None:
            if len(self.positions) != request.num_masks:
                raise ProtocolError(
                    f"expected {request.num_masks} positions, got {len(self.positions)}"
                )
            for pos in self.positions:
                missing = [c for c in request.candidate_ids if c not in pos.candidate_logprobs]
                if missing:
                    raise ProtocolError(f"response missing candidate ids {missing}")
        for pos in self.positions:
            for v in pos.candidate_logprobs.values():
                if not np.isfinite(v):
                    raise ProtocolError("non-finite log-probability in response")

    def to_dict(self) -> dict:
        return {"positions": [p.to_dict() for p in self.positions], "truncated": self.truncated}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreResponse":
        try:
            return cls(
                positions=[PositionScores.from_dict(p) for p in d["positions"]],
                truncated=bool(d.get("truncated", False)),
            )
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed score response: {exc}") from exc


# ---------------------------------------------------------------------------
# scorer interface


class Scorer:
    """Anything that can tokenize text and fill a masked span."""

    def info(self) -> ScorerInfo:
        raise NotImplementedError

    def tokenize(self, text: str, mode: str = WITH_LEADING_SPACE) -> TokenizeResponse:
        raise NotImplementedError

    def fill(self, request: ScoreRequest) -> ScoreResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self) -> "Scorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _check_mode(mode: str) -> None:
    if mode not in TOKENIZE_MODES:
        raise ProtocolError(f"unknown tokenize mode: {mode!r}")


def center_truncate(
    left: list, right: list, num_masks: int, max_input_tokens: int
) -> tuple[list, list, bool]:
    """Trim context tokens so left + masks + right fits the model limit.

    Tokens nearest the mask span survive; the span itself is never cut.
    Returns (left, right, truncated).
    """
    budget = max_input_tokens - num_masks
    if budget < 0:
        raise ProtocolError(
            f"mask span of {num_masks} exceeds max_input_tokens={max_input_tokens}"
        )
    if len(left) + len(right) <= budget:
        return left, right, False
    half = budget // 2
    keep_left = min(len(left), max(half, budget - len(right)))
    keep_right = budget - keep_left
    new_left = left[len(left) - keep_left:] if keep_left else []
    new_right = right[:keep_right]
    return new_left, new_right, True


# ---------------------------------------------------------------------------
# word-level tokenizer shared by the in-process scorers

_WORD_RE = re.compile(r"\s*\S+")


class WordTokenizer:
    """Whitespace-word tokenizer with byte-pair-style space handling.

    Each token string carries its leading whitespace, so concatenating
    token_strings reproduces the input (after the mode's optional leading
    space). Ids are keyed hashes of the exact token string modulo the vocab
    size, or come from an explicit lexicon mapping bare words to id lists.
    """

    def __init__(self, vocab_size: int, lexicon: dict[str, list[int]] | None = None):
        self.vocab_size = vocab_size
        self.lexicon = lexicon or {}
        for word, ids in self.lexicon.items():
            if not ids:
                raise ValidationError(f"lexicon entry {word!r} maps to no ids")
            if any(not 0 <= i < vocab_size for i in ids):
                raise ValidationError(f"lexicon entry {word!r} has out-of-range ids")

    def word_id(self, token_string: str) -> int:
        return keyed_u64(7, "wordtok", token_string) % self.vocab_size

    def encode(self, text: str, mode: str) -> TokenizeResponse:
        _check_mode(mode)
        if not text:
            raise ProtocolError("text must be non-empty")
        if mode == WITH_LEADING_SPACE:
            text = " " + text
        pieces = _WORD_RE.findall(text)
        consumed = sum(len(p) for p in pieces)
        if consumed < len(text):
            # Trailing whitespace sticks to the last word.
            if pieces:
                pieces[-1] += text[consumed:]
            else:
                pieces = [text]
        ids: list[int] = []
        strings: list[str] = []
        for piece in pieces:
            bare = piece.strip()
            if bare in self.lexicon and len(self.lexicon[bare]) > 1:
                sub_ids = self.lexicon[bare]
                for j, (sub, chunk) in enumerate(zip(sub_ids, _split_even(piece, len(sub_ids)))):
                    ids.append(sub)
                    strings.append(chunk)
            else:
                ids.append(self.lexicon[bare][0] if bare in self.lexicon else self.word_id(piece))
                strings.append(piece)
        return TokenizeResponse(token_ids=ids, token_strings=strings)


def _split_even(s: str, k: int) -> list[str]:
    cuts = [round(j * len(s) / k) for j in range(k + 1)]
    return [s[cuts[j]:cuts[j + 1]] for j in range(k)]


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = float(np.max(x))
    return x - (m + np.log(np.sum(np.exp(x - m))))


def _topk_pairs(logprobs: np.ndarray, k: int) -> list[tuple[int, float]]:
    if k <= 0:
        return []
    # Descending score, ascending id on ties: same order the ranker uses.
    order = np.lexsort((np.arange(logprobs.size), -logprobs))
    return [(int(i), float(logprobs[i])) for i in order[:k]]


class _InProcessScorer(Scorer):
    """Common fill() skeleton: tokenize both context halves, truncate around
    the span, then delegate per-position scoring to the subclass."""

    _info: ScorerInfo
    _tokenizer: WordTokenizer

    def info(self) -> ScorerInfo:
        return self._info

    def tokenize(self, text: str, mode: str = WITH_LEADING_SPACE) -> TokenizeResponse:
        resp = self._tokenizer.encode(text, mode)
        if len(resp.token_ids) > self._info.max_input_tokens:
            raise ProtocolError(
                f"text tokenizes to {len(resp.token_ids)} tokens, "
                f"exceeds max_input_tokens={self._info.max_input_tokens}"
            )
        return resp

    def fill(self, request: ScoreRequest) -> ScoreResponse:
        request.validate()
        for c in request.candidate_ids:
            if c >= self._info.vocab_size:
                raise ProtocolError(
                    f"candidate id {c} out of range for vocab_size={self._info.vocab_size}"
                )
        left_text, right_text = request.context.split(SPAN_SENTINEL)
        left = self._tokenizer.encode(left_text, STANDALONE).token_ids if left_text else []
        right = self._tokenizer.encode(right_text, STANDALONE).token_ids if right_text else []
        _, _, truncated = center_truncate(
            left, right, request.num_masks, self._info.max_input_tokens
        )
        positions = [
            self._score_position(request, i) for i in range(request.num_masks)
        ]
        return ScoreResponse(positions=positions, truncated=truncated)

    def _score_position(self, request: ScoreRequest, position: int) -> PositionScores:
        raise NotImplementedError


class TableScorer(_InProcessScorer):
    """Scores read off an explicit per-position table; what the table says
    is exactly what comes back, which makes rank assertions trivial.

    ``tables[i]`` maps token id to log-probability at mask position i; a
    request with more masks than tables reuses the last table. Ids absent
    from a table score ``default_logprob``.
    """

    def __init__(
        self,
        tables: list[dict[int, float]],
        lexicon: dict[str, list[int]] | None = None,
        vocab_size: int = 1000,
        model_id: str = "table",
        max_input_tokens: int = 512,
        default_logprob: float = -30.0,
    ):
        if not tables:
            raise ValidationError("TableScorer needs at least one position table")
        self.tables = tables
        self.default_logprob = default_logprob
        self._info = ScorerInfo(
            model_id=model_id,
            vocab_size=vocab_size,
            mask_token="<mask>",
            max_input_tokens=max_input_tokens,
        )
        self._info.validate()
        self._tokenizer = WordTokenizer(vocab_size, lexicon)

    @classmethod
    def from_json(cls, path: str | Path) -> "TableScorer":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise TransportError(f"cannot read table scorer config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"table scorer config {path} is not valid JSON: {exc}") from exc
        return cls(
            tables=[{int(k): float(v) for k, v in t.items()} for t in raw["tables"]],
            lexicon={w: [int(i) for i in ids] for w, ids in raw.get("lexicon", {}).items()},
            vocab_size=int(raw.get("vocab_size", 1000)),
            model_id=str(raw.get("model_id", "table")),
            max_input_tokens=int(raw.get("max_input_tokens", 512)),
            default_logprob=float(raw.get("default_logprob", -30.0)),
        )

    def _score_position(self, request: ScoreRequest, position: int) -> PositionScores:
        table = self.tables[min(position, len(self.tables) - 1)]
        logprobs = {c: float(table.get(c, self.default_logprob)) for c in request.candidate_ids}
        pairs = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
        return PositionScores(
            candidate_logprobs=logprobs,
            topk=[(int(i), float(lp)) for i, lp in pairs[: request.topk]],
        )


class HashScorer(_InProcessScorer):
    """Deterministic pseudo-random scorer: the full-vocabulary distribution
    at each position is a pure function of (seed, context digest, position),
    so any (seed, context, position, id) score is reproducible bit-for-bit
    across runs and platforms."""

    def __init__(
        self,
        vocab_size: int = 1000,
        seed: int = 0,
        model_id: str | None = None,
        max_input_tokens: int = 512,
        lexicon: dict[str, list[int]] | None = None,
    ):
        self.seed = seed
        self._info = ScorerInfo(
            model_id=model_id or f"hash-v{vocab_size}-s{seed}",
            vocab_size=vocab_size,
            mask_token="<mask>",
            max_input_tokens=max_input_tokens,
        )
        self._info.validate()
        self._tokenizer = WordTokenizer(vocab_size, lexicon)

    def _distribution(self, context: str, position: int) -> np.ndarray:
        digest = keyed_u64(self.seed, "hashscorer", context)
        ss = np.random.SeedSequence([self.seed, digest, position])
        logits = np.random.default_rng(ss).standard_normal(self._info.vocab_size)
        return _log_softmax(logits)

    def _score_position(self, request: ScoreRequest, position: int) -> PositionScores:
        dist = self._distribution(request.context, position)
        return PositionScores(
            candidate_logprobs={c: float(dist[c]) for c in request.candidate_ids},
            topk=_topk_pairs(dist, request.topk),
        )


# ---------------------------------------------------------------------------
# HTTP transport

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.5


class HttpScorer(Scorer):
    """Client for the HTTP+JSON scorer contract.

    Connection failures and 5xx responses are retried up to 3 attempts with
    exponential backoff; 4xx responses are protocol errors and are not
    retried. Each thread gets its own session, so concurrent fills are safe.
    """

    def __init__(self, base_url: str, timeout: float = 60.0, retry_delay: float = RETRY_BASE_DELAY):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retry_delay = retry_delay
        self._local = threading.local()
        self._info_cache: ScorerInfo | None = None
        self._info_lock = threading.Lock()

    def _session(self):
        import requests

        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        import requests

        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(RETRY_ATTEMPTS):
            try:
                resp = self._session().request(method, url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                if attempt + 1 < RETRY_ATTEMPTS:
                    time.sleep(self.retry_delay * 2**attempt)
                continue
            if resp.status_code >= 500:
                last_exc = TransportError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
                if attempt + 1 < RETRY_ATTEMPTS:
                    time.sleep(self.retry_delay * 2**attempt)
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"{url} returned {resp.status_code}: {resp.text[:500]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned non-JSON body") from exc
        raise TransportError(f"scorer unreachable after {RETRY_ATTEMPTS} attempts: {last_exc}")

    def info(self) -> ScorerInfo:
        with self._info_lock:
            if self._info_cache is None:
                self._info_cache = ScorerInfo.from_dict(self._request("GET", "/info"))
            return self._info_cache

    def tokenize(self, text: str, mode: str = WITH_LEADING_SPACE) -> TokenizeResponse:
        _check_mode(mode)
        return TokenizeResponse.from_dict(
            self._request("POST", "/tokenize", {"text": text, "mode": mode})
        )

    def fill(self, request: ScoreRequest) -> ScoreResponse:
        request.validate()
        resp = ScoreResponse.from_dict(self._request("POST", "/fill", request.to_dict()))
        resp.validate(request)
        return resp


# ---------------------------------------------------------------------------
# stdio transport: one JSON object per line, payloads identical to HTTP

def serve_stdio(scorer: Scorer, stdin=None, stdout=None) -> None:
    """Answer line-framed JSON requests until EOF.

    Request: {"op": "info"|"tokenize"|"fill", "id": optional, ...payload}.
    Response: {"ok": true, "id": ..., "result": payload} or
    {"ok": false, "id": ..., "error": message}.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        req_id = None
        try:
            obj = json.loads(line)
            req_id = obj.get("id")
            op = obj.get("op")
            if op == "info":
                result = scorer.info().to_dict()
            elif op == "tokenize":
                result = scorer.tokenize(
                    str(obj.get("text", "")), str(obj.get("mode", WITH_LEADING_SPACE))
                ).to_dict()
            elif op == "fill":
                result = scorer.fill(ScoreRequest.from_dict(obj)).to_dict()
            else:
                raise ProtocolError(f"unknown op: {op!r}")
            out = {"ok": True, "id": req_id, "result": result}
        except Exception as exc:  # noqa: BLE001 - the server must not die on bad input
            out = {"ok": False, "id": req_id, "error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(out, sort_keys=True) + "\n")
        stdout.flush()


class StdioScorer(Scorer):
    """Client speaking the line-framed protocol to a subprocess."""

    def __init__(self, argv: list[str]):
        self.argv = argv
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"cannot start scorer process {argv!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._next_id = 0
        self._info_cache: ScorerInfo | None = None

    def _call(self, payload: dict) -> dict:
        with self._lock:
            self._next_id += 1
            payload = {**payload, "id": self._next_id}
            if self._proc.poll() is not None:
                raise TransportError(f"scorer process exited with code {self._proc.returncode}")
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"scorer process pipe failed: {exc}") from exc
            if not line:
                raise TransportError("scorer process closed its stdout")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"malformed scorer reply: {line[:200]!r}") from exc
            if obj.get("id") != payload["id"]:
                raise ProtocolError(
                    f"response id {obj.get('id')} does not match request id {payload['id']}"
                )
            if not obj.get("ok"):
                raise ProtocolError(str(obj.get("error", "scorer error")))
            return obj["result"]

    def info(self) -> ScorerInfo:
        if self._info_cache is None:
            self._info_cache = ScorerInfo.from_dict(self._call({"op": "info"}))
        return self._info_cache

    def tokenize(self, text: str, mode: str = WITH_LEADING_SPACE) -> TokenizeResponse:
        _check_mode(mode)
        return TokenizeResponse.from_dict(self._call({"op": "tokenize", "text": text, "mode": mode}))

    def fill(self, request: ScoreRequest) -> ScoreResponse:
        request.validate()
        resp = ScoreResponse.from_dict(self._call({"op": "fill", **request.to_dict()}))
        resp.validate(request)
        return resp

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


# ---------------------------------------------------------------------------
# endpoint resolution


def resolve_scorer(spec: str) -> Scorer:
    """Turn an endpoint string into a scorer.

    * ``http://...`` or ``https://...``: remote service
    * ``hash:VOCAB:SEED`` (both parts optional): in-process hash scorer
    * ``table:/path/to/config.json``: in-process table scorer
    * ``stdio:COMMAND ARGS...``: subprocess speaking line-framed JSON
    """
    if spec.startswith(("http://", "https://")):
        return HttpScorer(spec)
    if spec.startswith("hash:") or spec == "hash":
        parts = spec.split(":")[1:]
        try:
            vocab_size = int(parts[0]) if len(parts) > 0 and parts[0] else 1000
            seed = int(parts[1]) if len(parts) > 1 and parts[1] else 0
        except ValueError as exc:
            raise ValidationError(f"bad hash scorer spec {spec!r}") from exc
        return HashScorer(vocab_size=vocab_size, seed=seed)
    if spec.startswith("table:"):
        return TableScorer.from_json(spec[len("table:"):])
    if spec.startswith("stdio:"):
        argv = shlex.split(spec[len("stdio:"):])
        if not argv:
            raise ValidationError("stdio scorer spec has no command")
        return StdioScorer(argv)
    raise ValidationError(
        f"cannot interpret scorer endpoint {spec!r} "
        f"(expected http(s)://, hash:, table:, or stdio:)"
    )


def main(argv: Iterable[str] | None = None) -> int:
    """Serve an in-process scorer over stdio: python3 -m lexkit.scorer SPEC."""
    args = list(argv) if argv is not None else sys.argv[1:]
    if len(args) != 1:
        print("usage: python3 -m lexkit.scorer SPEC", file=sys.stderr)
        return 1
    try:
        scorer = resolve_scorer(args[0])
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    with scorer:
        serve_stdio(scorer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
