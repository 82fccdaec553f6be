"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or scorer
protocol error. Every output file starts with a self-describing header
(tool version, seed, config digest) so reruns are verifiable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    DEFAULT_SPLIT_SEED,
    DEFAULT_TEST_FRACTION,
    TEST,
    TRAIN,
    compute_stats,
    ingest,
    load_manifest,
)
from .evaluator import build_candidate_set, eval_task, InstanceResult, save_candidate_set
from .mlm_eval import MlmEvalConfig, eval_mlm
from .probes import ProbeInstance, build_probes, load_vocabulary, validate_probes
from .reporting import (
    FORMAT_MARKDOWN,
    FORMATS,
    aggregate,
    complexity_curve,
    curve_csv,
    render,
)
from .sampling import smoothed_rates, sample_stream, split_sentences
from .scorer import TOKENIZE_MODES, WITH_LEADING_SPACE, resolve_scorer
from .transfer import load_vocab_json, plan_embedding_transfer
from .util import LexkitError, config_digest, dump_json, make_header, write_jsonl


class _Parser(argparse.ArgumentParser):
    # Usage problems are validation errors (exit 1), not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lexkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lexkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_corpus_flags(p, splits=True):
        p.add_argument("--manifest", required=True, help="corpus manifest JSON")
        p.add_argument("--strict", action="store_true", help="malformed input lines are fatal")
        if splits:
            p.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION)
            p.add_argument("--split-seed", type=int, default=DEFAULT_SPLIT_SEED)

    def add_scorer_flag(p):
        p.add_argument(
            "--scorer",
            default=os.environ.get("LEXKIT_SCORER_URL"),
            help="scorer endpoint: http(s)://..., hash:VOCAB:SEED, table:FILE, stdio:CMD "
            "(default: $LEXKIT_SCORER_URL)",
        )

    p = sub.add_parser("stats", help="per-subcorpus document/token counts and shares")
    add_corpus_flags(p, splits=False)
    p.add_argument("--format", choices=["markdown", "json"], default="markdown")
    p.add_argument("--out", help="output path (default: stdout)")

    p = sub.add_parser("sample", help="draw a smoothed interleaved sentence sample")
    add_corpus_flags(p)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--split", choices=[TRAIN, TEST, "all"], default="all")
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-probes", help="mine masked probe instances from the corpus")
    add_corpus_flags(p)
    p.add_argument("--vocab", required=True, help="term vocabulary JSON")
    p.add_argument("--window-chars", type=int, default=2000)
    p.add_argument("--max-per-label", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=[TRAIN, TEST], default=TEST)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-probes", help="score probe instances against a scorer")
    p.add_argument("--probes", required=True)
    p.add_argument("--vocab", required=True)
    add_scorer_flag(p)
    p.add_argument("--mode", choices=list(TOKENIZE_MODES), default=WITH_LEADING_SPACE)
    p.add_argument("--strict-p1", action="store_true", help="P@1 requires every position correct")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--save-candidates", help="also write the candidate id set to this path")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-mlm", help="masked-token top-1 accuracy per subcorpus")
    add_corpus_flags(p)
    add_scorer_flag(p)
    p.add_argument("--rate", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-chunks", type=int, default=100)
    p.add_argument("--chunk-tokens", type=int, default=128)
    p.add_argument("--split", choices=[TRAIN, TEST], default=TEST)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate instance results into a task report")
    p.add_argument("--results", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--format", choices=list(FORMATS), default=FORMAT_MARKDOWN)
    p.add_argument("--weighted-clusters", action="store_true")
    p.add_argument("--curve", help="also write the complexity curve CSV to this path")
    p.add_argument("--out", help="output path (default: stdout)")

    p = sub.add_parser("transfer-plan", help="embedding warm-start plan between vocabularies")
    p.add_argument("--old", required=True, help="old vocabulary JSON (token -> id)")
    p.add_argument("--new", required=True, help="new vocabulary JSON (token -> id)")
    p.add_argument("--out", required=True, help="plan entries JSONL")
    p.add_argument("--summary", help="summary JSON path (default: stdout)")

    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _comment_header(kind: str, config: dict, markdown: bool) -> str:
    digest = config_digest(config)
    body = f"lexkit {kind} v{__version__} seed={config.get('seed')} config_digest={digest}"
    return f"<!-- {body} -->\n" if markdown else f"# {body}\n"


def _require_scorer(args) -> str:
    if not args.scorer:
        raise LexkitError("no scorer endpoint: pass --scorer or set LEXKIT_SCORER_URL")
    return args.scorer


def _cmd_stats(args) -> int:
    corpus = ingest(load_manifest(args.manifest), strict=args.strict)
    stats = compute_stats(corpus)
    config = {"manifest": args.manifest, "strict": args.strict, "seed": None}
    if args.format == "markdown":
        _emit(_comment_header("stats", config, markdown=True) + stats.to_markdown(), args.out)
    else:
        payload = {"header": make_header("stats", config, __version__), "stats": stats.to_dict()}
        _emit(dump_json(payload) + "\n", args.out)
    bad = {k: v for k, v in corpus.malformed_counts.items() if v}
    if bad:
        print(f"lexkit: skipped malformed lines: {bad}", file=sys.stderr)
    return 0


def _cmd_sample(args) -> int:
    corpus = ingest(load_manifest(args.manifest), strict=args.strict).with_splits(
        args.test_fraction, args.split_seed
    )
    stats = compute_stats(corpus)
    ids = [s for s in corpus.subcorpus_ids if stats.per_subcorpus[s].token_count > 0]
    if not ids:
        raise LexkitError("corpus has no tokens to sample from")
    shares = [stats.per_subcorpus[s].token_count for s in ids]
    plan = smoothed_rates(shares, args.alpha, subcorpus_ids=ids)
    split = None if args.split == "all" else args.split

    def factory(sub_id):
        def gen():
            for record in corpus.iter_documents(subcorpus_id=sub_id, split=split):
                yield from split_sentences(record.text)

        return gen

    sources = {s: factory(s) for s in ids}
    config = {
        "manifest": args.manifest,
        "alpha": args.alpha,
        "seed": args.seed,
        "count": args.count,
        "split": args.split,
        "plan": plan.to_dict(),
    }
    stream = sample_stream(sources, plan, args.seed, args.count)
    rows = ({"subcorpus_id": sub_id, "text": text} for sub_id, text in stream)
    write_jsonl(args.out, rows, header=make_header("sample", config, __version__))
    return 0


def _cmd_build_probes(args) -> int:
    corpus = ingest(load_manifest(args.manifest), strict=args.strict).with_splits(
        args.test_fraction, args.split_seed
    )
    vocab = load_vocabulary(args.vocab)
    report = build_probes(
        corpus,
        vocab,
        window_chars=args.window_chars,
        max_per_label=args.max_per_label,
        seed=args.seed,
        split=args.split,
    )
    config = {
        "manifest": args.manifest,
        "vocab": args.vocab,
        "window_chars": args.window_chars,
        "max_per_label": args.max_per_label,
        "seed": args.seed,
        "split": args.split,
        "test_fraction": args.test_fraction,
        "split_seed": args.split_seed,
    }
    write_jsonl(
        args.out,
        (i.to_dict() for i in report.instances),
        header=make_header("probes", config, __version__),
    )
    print(dump_json(report.coverage_summary()), file=sys.stderr)
    return 0


def _cmd_eval_probes(args) -> int:
    vocab = load_vocabulary(args.vocab)
    instances = [ProbeInstance.from_dict(d) for d in _read_jsonl(args.probes)]
    with resolve_scorer(_require_scorer(args)) as scorer:
        cset = build_candidate_set(vocab, scorer, mode=args.mode)
        if args.save_candidates:
            save_candidate_set(cset, args.save_candidates)
        outcome = eval_task(
            instances, cset, scorer, seed=args.seed, jobs=args.jobs, strict_p1=args.strict_p1
        )
    config = {
        "probes": args.probes,
        "vocab": args.vocab,
        "scorer": args.scorer,
        "model_id": cset.model_id,
        "mode": args.mode,
        "strict_p1": args.strict_p1,
        "seed": args.seed,
    }
    write_jsonl(
        args.out,
        (r.to_dict() for r in outcome.results),
        header=make_header("results", config, __version__),
    )
    print(dump_json(outcome.counts), file=sys.stderr)
    if outcome.errors:
        for iid, msg in outcome.errors[:10]:
            print(f"lexkit: instance {iid} errored: {msg}", file=sys.stderr)
    return 0


def _cmd_eval_mlm(args) -> int:
    corpus = ingest(load_manifest(args.manifest), strict=args.strict).with_splits(
        args.test_fraction, args.split_seed
    )
    config = MlmEvalConfig(
        mask_rate=args.rate,
        max_chunks=args.max_chunks,
        seed=args.seed,
        chunk_tokens=args.chunk_tokens,
        split=args.split,
    )
    with resolve_scorer(_require_scorer(args)) as scorer:
        report = eval_mlm(corpus, config, scorer, jobs=args.jobs)
    header_config = {"manifest": args.manifest, "scorer": args.scorer, **config.to_dict()}
    payload = {
        "header": make_header("mlm", header_config, __version__),
        "report": report.to_dict(),
    }
    _emit(dump_json(payload) + "\n", args.out)
    avg = report.average
    print(f"lexkit: mlm average accuracy: {'n/a' if avg is None else f'{avg:.4f}'}", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    vocab = load_vocabulary(args.vocab)
    results = [InstanceResult.from_dict(d) for d in _read_jsonl(args.results)]
    report = aggregate(results, vocab, weighted_clusters=args.weighted_clusters)
    config = {
        "results": args.results,
        "vocab": args.vocab,
        "format": args.format,
        "weighted_clusters": args.weighted_clusters,
        "seed": None,
    }
    rendered = render(report, args.format)
    if args.format == FORMAT_MARKDOWN:
        rendered = _comment_header("report", config, markdown=True) + rendered
    elif args.format == "csv":
        rendered = _comment_header("report", config, markdown=False) + rendered
    else:
        payload = {"header": make_header("report", config, __version__), "report": report.to_dict()}
        rendered = dump_json(payload) + "\n"
    _emit(rendered, args.out)
    if args.curve:
        curve = complexity_curve(results)
        Path(args.curve).write_text(
            _comment_header("curve", config, markdown=False) + curve_csv(curve), encoding="utf-8"
        )
    return 0


def _cmd_transfer_plan(args) -> int:
    old_vocab = load_vocab_json(args.old)
    new_vocab = load_vocab_json(args.new)
    plan = plan_embedding_transfer(old_vocab, new_vocab)
    config = {"old": args.old, "new": args.new, "seed": None}
    write_jsonl(
        args.out,
        (e.to_dict() for e in plan.entries),
        header=make_header("transfer_plan", config, __version__),
    )
    summary = {"header": make_header("transfer_summary", config, __version__), **plan.summary()}
    _emit(dump_json(summary) + "\n", args.summary)
    return 0


def _read_jsonl(path):
    from .util import TransportError, ValidationError, read_jsonl

    try:
        return list(read_jsonl(path))
    except OSError as exc:
        raise TransportError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSONL: {exc}") from exc


_COMMANDS = {
    "stats": _cmd_stats,
    "sample": _cmd_sample,
    "build-probes": _cmd_build_probes,
    "eval-probes": _cmd_eval_probes,
    "eval-mlm": _cmd_eval_mlm,
    "report": _cmd_report,
    "transfer-plan": _cmd_transfer_plan,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except LexkitError as exc:
        print(f"lexkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"lexkit: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
