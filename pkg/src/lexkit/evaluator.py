"""Constrained fill-mask evaluation: expand each gold surface to its k
sub-tokens, rank every sub-token inside the task's candidate id set, and
reduce to per-instance MRR and P@1.

The candidate set V_task is the union of sub-token ids over all task
labels; ranking is a restriction of the full-vocabulary order to V_task,
never a renormalization. Ties are broken by ascending token id so results
are reproducible everywhere.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .probes import ProbeInstance, TermVocabulary
from .scorer import (
    WITH_LEADING_SPACE,
    ProtocolError,
    ScoreRequest,
    Scorer,
    TransportError,
)
from .util import LexkitError, ValidationError


@dataclass
class CandidateSet:
    task_id: str
    model_id: str
    ids: list[int]
    label_token_ids: dict[str, list[int]]
    tokenize_mode: str = WITH_LEADING_SPACE

    def validate(self) -> None:
        if len(self.ids) < 2:
            raise ValidationError(f"candidate set must have >= 2 ids, got {len(self.ids)}")
        id_set = set(self.ids)
        for surface, ids in self.label_token_ids.items():
            if not ids:
                raise ValidationError(f"label {surface!r} has no token ids")
            stray = [i for i in ids if i not in id_set]
            if stray:
                raise ValidationError(f"label {surface!r} ids {stray} missing from candidate set")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "model_id": self.model_id,
            "ids": list(self.ids),
            "label_token_ids": {s: list(i) for s, i in self.label_token_ids.items()},
            "tokenize_mode": self.tokenize_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSet":
        cset = cls(
            task_id=d["task_id"],
            model_id=d["model_id"],
            ids=[int(i) for i in d["ids"]],
            label_token_ids={s: [int(i) for i in ids] for s, ids in d["label_token_ids"].items()},
            tokenize_mode=d.get("tokenize_mode", WITH_LEADING_SPACE),
        )
        cset.validate()
        return cset


def build_candidate_set(
    vocab: TermVocabulary, scorer: Scorer, mode: str = WITH_LEADING_SPACE
) -> CandidateSet:
    """Tokenize each label once under the scorer and union the ids."""
    vocab.validate()
    label_ids: dict[str, list[int]] = {}
    union: set[int] = set()
    for label in vocab.labels:
        ids = scorer.tokenize(label.surface, mode).token_ids
        if not ids:
            raise ValidationError(f"label {label.surface!r} tokenizes to 0 ids")
        label_ids[label.surface] = ids
        union.update(ids)
    cset = CandidateSet(
        task_id=vocab.task_id,
        model_id=scorer.info().model_id,
        ids=sorted(union),
        label_token_ids=label_ids,
        tokenize_mode=mode,
    )
    cset.validate()
    return cset


def save_candidate_set(cset: CandidateSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cset.to_dict(), sort_keys=True, indent=1), encoding="utf-8")


def load_candidate_set(path: str | Path, scorer: Scorer | None = None) -> CandidateSet:
    """Load a cached candidate set; a scorer argument rejects stale caches
    built under a different model."""
    try:
        cset = CandidateSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except OSError as exc:
        raise TransportError(f"cannot read candidate set {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"candidate set {path} is malformed: {exc}") from exc
    if scorer is not None:
        model_id = scorer.info().model_id
        if cset.model_id != model_id:
            raise ValidationError(
                f"candidate set was built for model {cset.model_id!r}, scorer is {model_id!r}"
            )
    return cset


@dataclass
class InstanceResult:
    instance_id: str
    k: int
    ranks: list[int]
    rr: list[float]
    instance_mrr: float
    instance_p1: float
    gold_surface: str
    cluster: str
    context_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "k": self.k,
            "ranks": list(self.ranks),
            "rr": list(self.rr),
            "instance_mrr": self.instance_mrr,
            "instance_p1": self.instance_p1,
            "gold_surface": self.gold_surface,
            "cluster": self.cluster,
            "context_tokens": self.context_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceResult":
        return cls(
            instance_id=d["instance_id"],
            k=int(d["k"]),
            ranks=[int(r) for r in d["ranks"]],
            rr=[float(r) for r in d["rr"]],
            instance_mrr=float(d["instance_mrr"]),
            instance_p1=float(d["instance_p1"]),
            gold_surface=d["gold_surface"],
            cluster=d.get("cluster", "all"),
            context_tokens=int(d.get("context_tokens", 0)),
        )


def rank_within(scores: dict[int, float], gold_id: int) -> int:
    """Competition rank of the gold id inside the candidate scores, ties
    broken by ascending token id: rank = 1 + #{better} + #{equal with
    smaller id}."""
    gold_score = scores[gold_id]
    worse = 0
    for token_id, score in scores.items():
        if score > gold_score or (score == gold_score and token_id < gold_id):
            worse += 1
    return 1 + worse


def eval_instance(
    instance: ProbeInstance,
    cset: CandidateSet,
    scorer: Scorer,
    strict_p1: bool = False,
) -> InstanceResult:
    """Score one probe: k masks, per-position rank of each gold sub-token
    within V_task, averaged reciprocal ranks.

    With ``strict_p1`` the instance scores P@1 = 1 only when every position
    ranks its gold first; the default averages the per-position indicator.
    """
    gold_ids = cset.label_token_ids.get(instance.gold_surface)
    if gold_ids is None:
        raise ValidationError(
            f"instance {instance.instance_id}: gold {instance.gold_surface!r} "
            f"not in candidate set for task {cset.task_id}"
        )
    k = len(gold_ids)
    request = ScoreRequest(
        context=instance.context, num_masks=k, candidate_ids=list(cset.ids), topk=0
    )
    response = scorer.fill(request)
    response.validate(request)
    ranks = [
        rank_within(response.positions[i].candidate_logprobs, gold_ids[i]) for i in range(k)
    ]
    rr = [1.0 / r for r in ranks]
    if strict_p1:
        p1 = 1.0 if all(r == 1 for r in ranks) else 0.0
    else:
        p1 = sum(1 for r in ranks if r == 1) / k
    return InstanceResult(
        instance_id=instance.instance_id,
        k=k,
        ranks=ranks,
        rr=rr,
        instance_mrr=sum(rr) / k,
        instance_p1=p1,
        gold_surface=instance.gold_surface,
        cluster=instance.cluster,
        context_tokens=len(instance.context.split()),
    )


@dataclass
class TaskEvalResult:
    results: list[InstanceResult]
    errors: list[tuple[str, str]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        return {
            "evaluated": len(self.results),
            "errored": len(self.errors),
            "skipped": len(self.skipped),
        }


def eval_task(
    instances: Sequence[ProbeInstance],
    cset: CandidateSet,
    scorer: Scorer,
    seed: int = 0,
    jobs: int = 1,
    strict_p1: bool = False,
) -> TaskEvalResult:
    """Evaluate a task's instances; failures are recorded per instance, and
    results come back in the input (canonical) order regardless of how many
    workers ran.

    ``seed`` does not influence scoring (the pipeline is deterministic); it
    is threaded through so output headers record the run configuration.
    """
    del seed
    instances = list(instances)
    if not instances:
        raise ValidationError("no instances to evaluate")

    skipped = [i.instance_id for i in instances if i.gold_surface not in cset.label_token_ids]
    skipped_set = set(skipped)
    runnable = [i for i in instances if i.instance_id not in skipped_set]
    if not runnable:
        raise ValidationError("every instance's gold surface is missing from the candidate set")

    def run(inst: ProbeInstance) -> tuple[str, InstanceResult | None, str | None]:
        try:
            return inst.instance_id, eval_instance(inst, cset, scorer, strict_p1=strict_p1), None
        except (ProtocolError, TransportError, LexkitError) as exc:
            return inst.instance_id, None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, runnable))
    else:
        outcomes = [run(inst) for inst in runnable]

    by_id = {iid: (res, err) for iid, res, err in outcomes}
    results: list[InstanceResult] = []
    errors: list[tuple[str, str]] = []
    for inst in runnable:
        res, err = by_id[inst.instance_id]
        if res is not None:
            results.append(res)
        else:
            errors.append((inst.instance_id, err or "unknown error"))
    if runnable and not results:
        raise TransportError(
            f"all {len(runnable)} instances errored; first: {errors[0][1] if errors else 'n/a'}"
        )
    return TaskEvalResult(results=results, errors=errors, skipped=skipped)
