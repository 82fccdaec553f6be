"""Macro aggregation and rendering: per-label means, unweighted macro over
labels, cluster rollups, model ranking with shared ranks, and the
label-complexity curve (mean MRR bucketed by gold sub-token count)."""

from __future__ import annotations

import io
import csv as _csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .evaluator import InstanceResult
from .probes import TermVocabulary
from .util import ValidationError, dump_json

RANK_TIE_TOL = 1e-9

FORMAT_JSON = "json"
FORMAT_CSV = "csv"
FORMAT_MARKDOWN = "markdown"
FORMATS = (FORMAT_JSON, FORMAT_CSV, FORMAT_MARKDOWN)


@dataclass
class LabelStats:
    n_instances: int
    mean_mrr: float
    mean_p1: float
    k: int
    cluster: str


@dataclass
class TaskReport:
    task_id: str
    per_label: dict[str, LabelStats]
    per_cluster: dict[str, dict[str, float]]
    macro_mrr: float
    macro_p1: float
    missing_labels: list[str] = field(default_factory=list)
    stats: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "per_label": {
                s: {
                    "n_instances": ls.n_instances,
                    "mean_mrr": ls.mean_mrr,
                    "mean_p1": ls.mean_p1,
                    "k": ls.k,
                    "cluster": ls.cluster,
                }
                for s, ls in self.per_label.items()
            },
            "per_cluster": self.per_cluster,
            "macro_mrr": self.macro_mrr,
            "macro_p1": self.macro_p1,
            "missing_labels": list(self.missing_labels),
            "stats": dict(self.stats),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskReport":
        return cls(
            task_id=d["task_id"],
            per_label={
                s: LabelStats(
                    n_instances=int(v["n_instances"]),
                    mean_mrr=float(v["mean_mrr"]),
                    mean_p1=float(v["mean_p1"]),
                    k=int(v["k"]),
                    cluster=v["cluster"],
                )
                for s, v in d["per_label"].items()
            },
            per_cluster=d["per_cluster"],
            macro_mrr=float(d["macro_mrr"]),
            macro_p1=float(d["macro_p1"]),
            missing_labels=list(d.get("missing_labels", [])),
            stats=dict(d.get("stats", {})),
        )


def aggregate(
    results: Sequence[InstanceResult],
    vocab: TermVocabulary,
    weighted_clusters: bool = False,
) -> TaskReport:
    """Label means first, then unweighted macro over labels with instances.

    Cluster means are unweighted over member labels by default; the
    ``weighted_clusters`` flag switches to instance-count weighting.
    Labels with zero instances are excluded from all means and listed.
    """
    if not results:
        raise ValidationError("no results to aggregate")
    vocab.validate()
    known = set(vocab.surfaces)
    by_label: dict[str, list[InstanceResult]] = {}
    for r in results:
        if r.gold_surface not in known:
            raise ValidationError(f"result {r.instance_id}: gold {r.gold_surface!r} not in vocabulary")
        by_label.setdefault(r.gold_surface, []).append(r)

    per_label: dict[str, LabelStats] = {}
    for label in vocab.labels:
        rs = by_label.get(label.surface)
        if not rs:
            continue
        per_label[label.surface] = LabelStats(
            n_instances=len(rs),
            mean_mrr=sum(r.instance_mrr for r in rs) / len(rs),
            mean_p1=sum(r.instance_p1 for r in rs) / len(rs),
            k=rs[0].k,
            cluster=label.cluster,
        )

    per_cluster: dict[str, dict[str, float]] = {}
    clusters: dict[str, list[str]] = {}
    for surface, ls in per_label.items():
        clusters.setdefault(ls.cluster, []).append(surface)
    for cluster, members in clusters.items():
        stats = [per_label[m] for m in members]
        if weighted_clusters:
            total = sum(s.n_instances for s in stats)
            mrr = sum(s.mean_mrr * s.n_instances for s in stats) / total
            p1 = sum(s.mean_p1 * s.n_instances for s in stats) / total
        else:
            mrr = sum(s.mean_mrr for s in stats) / len(stats)
            p1 = sum(s.mean_p1 for s in stats) / len(stats)
        per_cluster[cluster] = {"mean_mrr": mrr, "mean_p1": p1, "n_labels": len(members)}

    label_stats = list(per_label.values())
    macro_mrr = sum(s.mean_mrr for s in label_stats) / len(label_stats)
    macro_p1 = sum(s.mean_p1 for s in label_stats) / len(label_stats)
    return TaskReport(
        task_id=vocab.task_id,
        per_label=per_label,
        per_cluster=per_cluster,
        macro_mrr=macro_mrr,
        macro_p1=macro_p1,
        missing_labels=sorted(known - set(per_label)),
        stats={
            "avg_input_tokens": sum(r.context_tokens for r in results) / len(results),
            "n_labels": len(vocab.labels),
            "avg_tokens_per_label": sum(s.k for s in label_stats) / len(label_stats),
        },
    )


@dataclass
class CurveBucket:
    k: int
    mean_mrr: float
    n_instances: int


def complexity_curve(results: Iterable[InstanceResult]) -> list[CurveBucket]:
    """Micro mean MRR per gold sub-token count, ascending in k."""
    by_k: dict[int, list[float]] = {}
    for r in results:
        by_k.setdefault(r.k, []).append(r.instance_mrr)
    return [
        CurveBucket(k=k, mean_mrr=sum(v) / len(v), n_instances=len(v))
        for k, v in sorted(by_k.items())
    ]


def curve_csv(buckets: Sequence[CurveBucket]) -> str:
    out = io.StringIO()
    writer = _csv.writer(out, lineterminator="\n")
    writer.writerow(["k", "mean_mrr", "n_instances"])
    for b in buckets:
        writer.writerow([b.k, repr(b.mean_mrr), b.n_instances])
    return out.getvalue()


@dataclass
class ModelRanking:
    entries: list[tuple[str, float, int]]

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"model_id": m, "average": a, "rank": r} for m, a, r in self.entries
            ]
        }


def rank_models(averages: Mapping[str, float] | Sequence[tuple[str, float]]) -> ModelRanking:
    """Competition ranking, descending by average; averages within 1e-9
    share a rank and the next distinct average skips past the tie block
    (1, 2, 2, 4)."""
    items = list(averages.items()) if isinstance(averages, Mapping) else list(averages)
    if len(items) < 2:
        raise ValidationError(f"need >= 2 models to rank, got {len(items)}")
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    entries: list[tuple[str, float, int]] = []
    group_rank = 1
    group_score = items[0][1]
    for i, (model_id, avg) in enumerate(items):
        if abs(avg - group_score) > RANK_TIE_TOL:
            group_rank = i + 1
            group_score = avg
        entries.append((model_id, avg, group_rank))
    return ModelRanking(entries=entries)


def render(report: TaskReport, fmt: str) -> str:
    if fmt == FORMAT_JSON:
        return dump_json(report.to_dict()) + "\n"
    if fmt == FORMAT_CSV:
        return _render_csv(report)
    if fmt == FORMAT_MARKDOWN:
        return _render_markdown(report)
    raise ValidationError(f"unknown format {fmt!r} (expected one of {', '.join(FORMATS)})")


def _render_csv(report: TaskReport) -> str:
    out = io.StringIO()
    writer = _csv.writer(out, lineterminator="\n")
    writer.writerow(["label", "cluster", "n_instances", "k", "mean_mrr", "mean_p1"])
    for surface, ls in report.per_label.items():
        writer.writerow(
            [surface, ls.cluster, ls.n_instances, ls.k, repr(ls.mean_mrr), repr(ls.mean_p1)]
        )
    writer.writerow(["__macro__", "", "", "", repr(report.macro_mrr), repr(report.macro_p1)])
    return out.getvalue()


def _render_markdown(report: TaskReport) -> str:
    lines = [f"## {report.task_id}", ""]
    lines += [
        "| Label | Cluster | Instances | MRR | P@1 |",
        "|---|---|---:|---:|---:|",
    ]
    for surface, ls in report.per_label.items():
        lines.append(
            f"| {surface} | {ls.cluster} | {ls.n_instances} "
            f"| {ls.mean_mrr:.3f} | {ls.mean_p1:.3f} |"
        )
    lines.append(f"| **Macro** |  |  | {report.macro_mrr:.3f} | {report.macro_p1:.3f} |")
    if len(report.per_cluster) > 1:
        lines += [
            "",
            "| Cluster | Labels | MRR | P@1 |",
            "|---|---:|---:|---:|",
        ]
        for cluster, c in report.per_cluster.items():
            lines.append(
                f"| {cluster} | {int(c['n_labels'])} | {c['mean_mrr']:.3f} | {c['mean_p1']:.3f} |"
            )
    if report.stats:
        lines += [
            "",
            "| #T | #L | #T/L |",
            "|---:|---:|---:|",
            f"| {report.stats['avg_input_tokens']:.1f} "
            f"| {int(report.stats['n_labels'])} "
            f"| {report.stats['avg_tokens_per_label']:.2f} |",
        ]
    if report.missing_labels:
        lines += ["", f"Labels without instances: {', '.join(report.missing_labels)}"]
    return "\n".join(lines) + "\n"


def render_ranking_markdown(ranking: ModelRanking) -> str:
    lines = ["| Model | Average | Rank |", "|---|---:|---:|"]
    for model_id, avg, rank in ranking.entries:
        lines.append(f"| {model_id} | {avg:.1f} | {rank} |")
    return "\n".join(lines) + "\n"
