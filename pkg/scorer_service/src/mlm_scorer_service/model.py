"""Model loading and the protocol's scoring semantics.

The service never renormalizes over candidates: /fill computes a
log-softmax over the full vocabulary at each mask position and extracts
the requested candidate ids and the top-k; rank restriction is the
caller's business. Oversize fill contexts are truncated around the masked
span (the span itself is never cut) and flagged, while oversize /tokenize
inputs are rejected with the limit echoed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

SPAN_SENTINEL = "<|span|>"

STANDALONE = "standalone"
WITH_LEADING_SPACE = "with_leading_space"
TOKENIZE_MODES = (STANDALONE, WITH_LEADING_SPACE)


class ServiceError(Exception):
    """Protocol-level problem with a request; mapped to HTTP 400."""


@dataclass
class LoadedModel:
    model_id: str
    tokenizer: object
    model: object
    mask_token: str
    mask_token_id: int
    device: str
    max_input_tokens: int

    @property
    def vocab_size(self) -> int:
        return int(self.model.config.vocab_size)

    def info(self) -> dict:
        return {
            "model_id": self.model_id,
            "vocab_size": self.vocab_size,
            "mask_token": self.mask_token,
            "max_input_tokens": self.max_input_tokens,
        }


def load_model(model_path: str, device: str = "cpu") -> LoadedModel:
    """Mount a masked LM from a local path or hub id.

    Fails fast if the tokenizer and model vocabularies disagree in size or
    the tokenizer has no mask token, since every /fill would be garbage.
    """
    from transformers import AutoModelForMaskedLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_path)
    model = AutoModelForMaskedLM.from_pretrained(model_path)
    model.to(device)
    model.eval()

    if tokenizer.mask_token is None or tokenizer.mask_token_id is None:
        raise RuntimeError(f"tokenizer at {model_path} has no mask token")
    tok_size = len(tokenizer)
    cfg_size = int(model.config.vocab_size)
    if tok_size != cfg_size:
        raise RuntimeError(
            f"tokenizer/model vocabulary mismatch: {tok_size} != {cfg_size}"
        )

    # usable sequence budget: position table minus special-token overhead
    # (RoBERTa burns two extra position slots on its padding offset)
    mpe = int(getattr(model.config, "max_position_embeddings", 512))
    offset = 2 if model.config.model_type in ("roberta", "camembert", "xlm-roberta") else 0
    max_input = mpe - offset - 2

    return LoadedModel(
        model_id=Path(str(model_path)).name or str(model_path),
        tokenizer=tokenizer,
        model=model,
        mask_token=tokenizer.mask_token,
        mask_token_id=int(tokenizer.mask_token_id),
        device=device,
        max_input_tokens=max_input,
    )


def _encode_ids(lm: LoadedModel, text: str) -> list[int]:
    if not text:
        return []
    return list(lm.tokenizer(text, add_special_tokens=False)["input_ids"])


def tokenize_text(lm: LoadedModel, text: str, mode: str) -> dict:
    """Sub-tokenize; token_strings tile the (mode-adjusted) input so their
    concatenation reproduces it exactly."""
    if mode not in TOKENIZE_MODES:
        raise ServiceError(f"unknown mode {mode!r} (expected one of {', '.join(TOKENIZE_MODES)})")
    if not text:
        raise ServiceError("text must be non-empty")
    if mode == WITH_LEADING_SPACE:
        text = " " + text
    enc = lm.tokenizer(text, add_special_tokens=False, return_offsets_mapping=True)
    ids = list(enc["input_ids"])
    if len(ids) > lm.max_input_tokens:
        raise ServiceError(
            f"text tokenizes to {len(ids)} tokens, "
            f"exceeds max_input_tokens={lm.max_input_tokens}"
        )
    strings: list[str] = []
    prev_end = 0
    for i, (_, end) in enumerate(enc["offset_mapping"]):
        end = len(text) if i == len(ids) - 1 else end
        strings.append(text[prev_end:end])
        prev_end = end
    return {"token_ids": [int(i) for i in ids], "token_strings": strings}


def _center_truncate(
    left: list[int], right: list[int], num_masks: int, max_input_tokens: int
) -> tuple[list[int], list[int], bool]:
    budget = max(0, max_input_tokens - num_masks)
    half = budget // 2
    keep_left = min(len(left), max(half, budget - len(right)))
    keep_right = min(len(right), budget - keep_left)
    truncated = keep_left < len(left) or keep_right < len(right)
    return left[len(left) - keep_left :], right[:keep_right], truncated


def _validate_fill(lm: LoadedModel, context: str, num_masks: int, candidate_ids, topk: int):
    n = context.count(SPAN_SENTINEL)
    if n != 1:
        raise ServiceError(f"context must contain the sentinel exactly once, found {n}")
    if num_masks < 1:
        raise ServiceError(f"num_masks must be >= 1, got {num_masks}")
    if num_masks > lm.max_input_tokens:
        raise ServiceError(
            f"num_masks={num_masks} exceeds max_input_tokens={lm.max_input_tokens}"
        )
    if len(set(candidate_ids)) != len(candidate_ids):
        raise ServiceError("candidate_ids must be unique")
    for c in candidate_ids:
        if c < 0:
            raise ServiceError("candidate_ids must be non-negative")
        if c >= lm.vocab_size:
            raise ServiceError(
                f"candidate id {c} out of range for vocab_size={lm.vocab_size}"
            )
    if topk < 0:
        raise ServiceError(f"topk must be >= 0, got {topk}")


def _mask_logprobs(lm: LoadedModel, context: str, num_masks: int):
    """Forward pass; returns (per-position float64 log-prob rows, truncated)."""
    left_text, right_text = context.split(SPAN_SENTINEL)
    # The mask slots stand for tokens that carry their own leading space
    # (leading-space tokenization), so whitespace butting up against the
    # sentinel belongs to the masked span, not the left context.
    left_text = left_text.rstrip()
    left, right, truncated = _center_truncate(
        _encode_ids(lm, left_text), _encode_ids(lm, right_text), num_masks, lm.max_input_tokens
    )
    tok = lm.tokenizer
    ids = (
        [int(tok.bos_token_id if tok.bos_token_id is not None else tok.cls_token_id)]
        + left
        + [lm.mask_token_id] * num_masks
        + right
        + [int(tok.eos_token_id if tok.eos_token_id is not None else tok.sep_token_id)]
    )
    input_ids = torch.tensor([ids], dtype=torch.long, device=lm.device)
    with torch.no_grad():
        logits = lm.model(input_ids=input_ids, attention_mask=torch.ones_like(input_ids)).logits[0]
    first = 1 + len(left)
    rows = logits[first : first + num_masks].double()
    logprobs = torch.log_softmax(rows, dim=-1).cpu().numpy()
    return logprobs, truncated


def _topk_pairs(logprobs: np.ndarray, k: int) -> list[list]:
    if k <= 0:
        return []
    # descending log-prob, ties broken by ascending id
    order = np.lexsort((np.arange(logprobs.size), -logprobs))
    return [[int(i), float(logprobs[i])] for i in order[:k]]


def fill(
    lm: LoadedModel,
    context: str,
    num_masks: int,
    candidate_ids: list[int],
    topk: int,
) -> dict:
    _validate_fill(lm, context, num_masks, candidate_ids, topk)
    logprobs, truncated = _mask_logprobs(lm, context, num_masks)
    positions = []
    for row in logprobs:
        positions.append(
            {
                "candidate_logprobs": {str(c): float(row[c]) for c in candidate_ids},
                "topk": _topk_pairs(row, topk),
            }
        )
    return {"positions": positions, "truncated": truncated}


def debug_distribution(lm: LoadedModel, context: str, num_masks: int) -> dict:
    """Per-position distribution health: exp-sum over the full vocabulary
    and the maximum log-probability."""
    _validate_fill(lm, context, num_masks, [], 0)
    logprobs, truncated = _mask_logprobs(lm, context, num_masks)
    positions = [
        {
            "exp_sum": float(np.exp(row).sum()),
            "max_logprob": float(row.max()),
            "vocab_size": int(row.size),
        }
        for row in logprobs
    ]
    return {"positions": positions, "truncated": truncated}
