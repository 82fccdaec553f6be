"""Exponentially smoothed multi-subcorpus sampling.

Raw token shares s_i are compressed to sampling rates
q_i = s_i**alpha / sum_j s_j**alpha. alpha=1 keeps the raw shares,
alpha=0 is uniform; intermediate values boost small sub-corpora so they
are revisited instead of drowned out by the large ones.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .util import ValidationError

SHARE_SUM_TOL = 1e-6


@dataclass
class SamplingPlan:
    shares: list[float]
    alpha: float
    rates: list[float]
    subcorpus_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"shares": self.shares, "alpha": self.alpha, "rates": self.rates}
        if self.subcorpus_ids:
            d["subcorpus_ids"] = self.subcorpus_ids
        return d


def smoothed_rates(
    shares: Iterable[float], alpha: float, subcorpus_ids: Iterable[str] | None = None
) -> SamplingPlan:
    """Build a SamplingPlan from raw shares (renormalized internally).

    Shares may be given as fractions, percentages, or raw token counts;
    only their ratios matter. All must be positive and alpha in [0, 1].
    """
    s = np.asarray(list(shares), dtype=float)
    if s.size == 0:
        raise ValidationError("shares must be non-empty")
    if np.any(s <= 0):
        raise ValidationError("all shares must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    total = s.sum()
    if abs(total - 1.0) > SHARE_SUM_TOL:
        s = s / total
    powered = s**alpha
    rates = powered / powered.sum()
    ids = list(subcorpus_ids) if subcorpus_ids is not None else []
    if ids and len(ids) != s.size:
        raise ValidationError("subcorpus_ids length does not match shares")
    return SamplingPlan(shares=s.tolist(), alpha=float(alpha), rates=rates.tolist(), subcorpus_ids=ids)


def fit_alpha(
    shares: Iterable[float],
    target_rates: Iterable[float],
    grid_step: float = 0.01,
) -> tuple[float, float]:
    """Recover the smoothing exponent from observed rates: grid search over
    alpha minimizing the max absolute deviation. Returns (alpha, max_dev)."""
    s = np.asarray(list(shares), dtype=float)
    t = np.asarray(list(target_rates), dtype=float)
    if s.shape != t.shape:
        raise ValidationError("shares and target_rates must have equal length")
    t = t / t.sum()
    best_alpha, best_dev = 0.0, float("inf")
    for alpha in np.arange(0.0, 1.0 + grid_step / 2, grid_step):
        alpha = round(float(alpha), 10)
        rates = np.asarray(smoothed_rates(s, alpha).rates)
        dev = float(np.max(np.abs(rates - t)))
        if dev < best_dev:
            best_alpha, best_dev = alpha, dev
    return best_alpha, best_dev


_SENTENCE_RE = re.compile(r"[^.!?\n]+[.!?]*\s*")


def split_sentences(text: str) -> list[str]:
    """Naive sentence segmentation on periods and newlines."""
    return [m.group().strip() for m in _SENTENCE_RE.finditer(text) if m.group().strip()]


class SampleStream:
    """Seeded interleaving of per-subcorpus unit streams.

    Each draw picks a sub-corpus i.i.d. with probability q_i; an exhausted
    stream restarts from its beginning (epoch wrap). ``wrap_counts`` records
    how many times each stream wrapped. Factories are re-invoked on wrap so
    sources can be lazily re-read.
    """

    _BLOCK = 8192

    def __init__(
        self,
        sources: dict[str, Callable[[], Iterable[str]]],
        plan: SamplingPlan,
        seed: int,
        count: int,
    ):
        if count < 1:
            raise ValidationError(f"count must be >= 1, got {count}")
        ids = plan.subcorpus_ids or list(sources)
        if set(ids) != set(sources):
            raise ValidationError("plan subcorpus_ids do not match sources")
        if len(ids) != len(plan.rates):
            raise ValidationError("plan rates do not match sources")
        self._ids = ids
        self._factories = sources
        self._rates = np.asarray(plan.rates, dtype=float)
        self._rng = np.random.default_rng(seed)
        self._count = count
        self._iters: dict[str, Iterator[str]] = {}
        self._started: dict[str, bool] = {s: False for s in ids}
        self.wrap_counts: dict[str, int] = {s: 0 for s in ids}

    def _next_unit(self, sub_id: str) -> str:
        it = self._iters.get(sub_id)
        if it is None:
            it = iter(self._factories[sub_id]())
            self._iters[sub_id] = it
        try:
            unit = next(it)
        except StopIteration:
            if not self._started[sub_id]:
                raise ValidationError(f"stream {sub_id!r} is empty") from None
            self.wrap_counts[sub_id] += 1
            it = iter(self._factories[sub_id]())
            self._iters[sub_id] = it
            try:
                unit = next(it)
            except StopIteration:
                raise ValidationError(f"stream {sub_id!r} is empty") from None
        self._started[sub_id] = True
        return unit

    def __iter__(self) -> Iterator[tuple[str, str]]:
        remaining = self._count
        while remaining > 0:
            block = min(remaining, self._BLOCK)
            picks = self._rng.choice(len(self._ids), size=block, p=self._rates)
            for idx in picks:
                sub_id = self._ids[int(idx)]
                yield sub_id, self._next_unit(sub_id)
            remaining -= block


def sample_stream(
    sources: dict[str, Callable[[], Iterable[str]]],
    plan: SamplingPlan,
    seed: int,
    count: int,
) -> SampleStream:
    return SampleStream(sources, plan, seed, count)
