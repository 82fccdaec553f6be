import json

import numpy as np
import pytest

from helpers import crime_vocab, make_planted_docs, write_vocab
from lexkit.cli import main
from lexkit.util import read_jsonl, read_jsonl_header


def _write_manifest(tmp_path, subcorpora, name="manifest.json"):
    entries = []
    for sub_id, docs in subcorpora.items():
        path = tmp_path / f"{sub_id}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for doc in docs:
                fh.write(json.dumps(doc) + "\n")
        entries.append({"subcorpus_id": sub_id, "path": f"{sub_id}.jsonl"})
    manifest = tmp_path / name
    manifest.write_text(json.dumps({"entries": entries}), encoding="utf-8")
    return str(manifest)


@pytest.fixture
def small_manifest(tmp_path):
    return _write_manifest(
        tmp_path,
        {
            "caselaw": [
                {"id": "c0", "text": "one two three"},
                {"id": "c1", "text": "four five"},
            ],
            "news": [{"id": "n0", "text": "six seven eight nine ten"}],
        },
    )


@pytest.fixture
def probe_setup(tmp_path):
    """Corpus with planted crime terms (all docs in the test split) plus the
    matching vocabulary file."""
    rng = np.random.default_rng(77)
    surfaces = ["theft", "arson", "fraud", "drug trafficking"]
    docs, _ = make_planted_docs(rng, surfaces, 60, plant_prob=0.9)
    for doc in docs:
        doc["split"] = "test"
    manifest = _write_manifest(tmp_path, {"body": docs})
    vocab_path = tmp_path / "vocab.json"
    write_vocab(vocab_path, crime_vocab())
    return manifest, str(vocab_path)


# --- exit codes -------------------------------------------------------------


def test_version_exit_zero(capsys):
    assert main(["--version"]) == 0
    assert "lexkit" in capsys.readouterr().out


def test_unknown_flag_exit_one(capsys):
    assert main(["stats", "--nope"]) == 1


def test_missing_subcommand_exit_one(capsys):
    assert main([]) == 1


def test_missing_manifest_exit_two(tmp_path, capsys):
    assert main(["stats", "--manifest", str(tmp_path / "missing.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_alpha_exit_one(small_manifest, tmp_path, capsys):
    code = main(
        ["sample", "--manifest", small_manifest, "--alpha", "1.5",
         "--out", str(tmp_path / "s.jsonl")]
    )
    assert code == 1
    assert "alpha" in capsys.readouterr().err


def test_no_scorer_exit_one(probe_setup, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("LEXKIT_SCORER_URL", raising=False)
    probes = tmp_path / "p.jsonl"
    probes.write_text("", encoding="utf-8")
    code = main(
        ["eval-probes", "--probes", str(probes), "--vocab", probe_setup[1],
         "--out", str(tmp_path / "r.jsonl")]
    )
    assert code == 1
    assert "no scorer endpoint" in capsys.readouterr().err


# --- stats ------------------------------------------------------------------


def test_stats_markdown_stdout(small_manifest, capsys):
    assert main(["stats", "--manifest", small_manifest]) == 0
    out = capsys.readouterr().out
    assert out.startswith("<!-- lexkit stats")
    assert "| Sub-Corpus | # Documents | # Tokens | Percentage (%) |" in out
    assert "| caselaw | 2 | 5 | 50.0 |" in out
    assert "| **Total** | 3 | 10 | 100.0 |" in out


def test_stats_json_out(small_manifest, tmp_path):
    out = tmp_path / "stats.json"
    assert main(["stats", "--manifest", small_manifest, "--format", "json",
                 "--out", str(out)]) == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["header"]["kind"] == "stats"
    assert "config_digest" in payload["header"]
    subs = payload["stats"]["per_subcorpus"]
    assert subs["news"]["token_count"] == 5
    assert subs["news"]["doc_count"] == 1
    assert payload["stats"]["total_tokens"] == 10


# --- sample -----------------------------------------------------------------


def test_sample_alpha_one_rates_match_shares(tmp_path):
    manifest = _write_manifest(
        tmp_path,
        {
            "big": [{"id": "b0", "text": " ".join(["w"] * 30) + "."}],
            "small": [{"id": "s0", "text": " ".join(["v"] * 10) + "."}],
        },
    )
    out = tmp_path / "sample.jsonl"
    code = main(
        ["sample", "--manifest", manifest, "--alpha", "1.0", "--seed", "3",
         "--count", "50", "--out", str(out)]
    )
    assert code == 0
    header = read_jsonl_header(out)
    plan = header["config"]["plan"]
    assert plan["alpha"] == 1.0
    assert plan["rates"] == pytest.approx([0.75, 0.25])
    assert plan["rates"] == pytest.approx(plan["shares"])
    rows = list(read_jsonl(out))
    assert len(rows) == 50
    assert {r["subcorpus_id"] for r in rows} <= {"big", "small"}
    assert all(r["text"] for r in rows)


def test_sample_byte_determinism(tmp_path):
    manifest = _write_manifest(
        tmp_path, {"a": [{"id": "a0", "text": "alpha beta. gamma delta. epsilon zeta."}]}
    )
    outs = []
    for name in ("s1.jsonl", "s2.jsonl"):
        out = tmp_path / name
        assert main(["sample", "--manifest", manifest, "--seed", "9", "--count", "20",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


# --- probe pipeline ---------------------------------------------------------


def test_full_probe_pipeline(probe_setup, tmp_path, capsys, monkeypatch):
    manifest, vocab_path = probe_setup
    probes = tmp_path / "probes.jsonl"
    assert main(["build-probes", "--manifest", manifest, "--vocab", vocab_path,
                 "--seed", "1", "--out", str(probes)]) == 0
    coverage = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert coverage["instances"] > 0
    assert "per_label_found" in coverage
    header = read_jsonl_header(probes)
    assert header["kind"] == "probes"

    monkeypatch.setenv("LEXKIT_SCORER_URL", "hash:4096:3")
    results = tmp_path / "results.jsonl"
    candidates = tmp_path / "candidates.json"
    assert main(["eval-probes", "--probes", str(probes), "--vocab", vocab_path,
                 "--jobs", "2", "--save-candidates", str(candidates),
                 "--out", str(results)]) == 0
    counts = json.loads(capsys.readouterr().err.strip().splitlines()[0])
    assert counts["errored"] == 0
    assert counts["evaluated"] == coverage["instances"]
    cset = json.loads(candidates.read_text(encoding="utf-8"))
    assert cset["ids"] == sorted(cset["ids"])
    assert len(cset["ids"]) >= 2

    report_md = tmp_path / "report.md"
    curve = tmp_path / "curve.csv"
    assert main(["report", "--results", str(results), "--vocab", vocab_path,
                 "--curve", str(curve), "--out", str(report_md)]) == 0
    text = report_md.read_text(encoding="utf-8")
    assert text.startswith("<!-- lexkit report")
    assert "| **Macro** |" in text
    assert curve.read_text(encoding="utf-8").splitlines()[1] == "k,mean_mrr,n_instances"


def test_probe_pipeline_byte_determinism(probe_setup, tmp_path, monkeypatch):
    # identical invocations overwrite the same paths; every stage must
    # reproduce byte-for-byte (headers carry no timestamps)
    manifest, vocab_path = probe_setup
    monkeypatch.setenv("LEXKIT_SCORER_URL", "hash:2048:7")
    probes = tmp_path / "probes.jsonl"
    results = tmp_path / "results.jsonl"
    report = tmp_path / "report.json"
    blobs = {"probes": [], "results": [], "report": []}
    for _ in range(2):
        assert main(["build-probes", "--manifest", manifest, "--vocab", vocab_path,
                     "--seed", "5", "--out", str(probes)]) == 0
        assert main(["eval-probes", "--probes", str(probes), "--vocab", vocab_path,
                     "--jobs", "4", "--out", str(results)]) == 0
        assert main(["report", "--results", str(results), "--vocab", vocab_path,
                     "--format", "json", "--out", str(report)]) == 0
        blobs["probes"].append(probes.read_bytes())
        blobs["results"].append(results.read_bytes())
        blobs["report"].append(report.read_bytes())
    assert blobs["probes"][0] == blobs["probes"][1]
    assert blobs["results"][0] == blobs["results"][1]
    assert blobs["report"][0] == blobs["report"][1]


def test_eval_probes_strict_p1_flag(probe_setup, tmp_path, monkeypatch):
    manifest, vocab_path = probe_setup
    monkeypatch.setenv("LEXKIT_SCORER_URL", "hash:2048:7")
    probes = tmp_path / "probes.jsonl"
    assert main(["build-probes", "--manifest", manifest, "--vocab", vocab_path,
                 "--out", str(probes)]) == 0
    plain = tmp_path / "plain.jsonl"
    strict = tmp_path / "strict.jsonl"
    assert main(["eval-probes", "--probes", str(probes), "--vocab", vocab_path,
                 "--out", str(plain)]) == 0
    assert main(["eval-probes", "--probes", str(probes), "--vocab", vocab_path,
                 "--strict-p1", "--out", str(strict)]) == 0
    by_id = {r["instance_id"]: r for r in read_jsonl(strict)}
    multi = [r for r in read_jsonl(plain) if r["k"] > 1]
    assert multi, "expected at least one multi-token gold"
    for r in multi:
        assert by_id[r["instance_id"]]["instance_p1"] <= r["instance_p1"]
        assert by_id[r["instance_id"]]["instance_mrr"] == r["instance_mrr"]


# --- eval-mlm ---------------------------------------------------------------


def test_eval_mlm_cli(probe_setup, tmp_path, capsys):
    manifest, _ = probe_setup
    out = tmp_path / "mlm.json"
    code = main(["eval-mlm", "--manifest", manifest, "--scorer", "hash:512:2",
                 "--max-chunks", "5", "--chunk-tokens", "30", "--out", str(out)])
    assert code == 0
    err = capsys.readouterr().err
    assert "mlm average accuracy" in err
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["header"]["kind"] == "mlm"
    rows = payload["report"]["rows"]
    assert rows[-1]["subcorpus"] == "Average"
    body = next(r for r in rows if r["subcorpus"] == "body")
    assert body["chunks"] == 5
    assert body["masked"] > 0


# --- transfer-plan ----------------------------------------------------------


def test_transfer_plan_cli(tmp_path, capsys):
    old = tmp_path / "old.json"
    new = tmp_path / "new.json"
    old.write_text('{"a": 0, "b": 1, "c": 2}', encoding="utf-8")
    new.write_text('{"b": 0, "d": 1}', encoding="utf-8")
    out = tmp_path / "plan.jsonl"
    assert main(["transfer-plan", "--old", str(old), "--new", str(new),
                 "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_copied"] == 1
    assert summary["overlap_fraction"] == 0.5
    rows = list(read_jsonl(out))
    assert rows == [
        {"new_id": 0, "token": "b", "action": "copy", "old_id": 1},
        {"new_id": 1, "token": "d", "action": "random_init"},
    ]


def test_transfer_plan_duplicate_keys_exit_one(tmp_path, capsys):
    old = tmp_path / "old.json"
    new = tmp_path / "new.json"
    old.write_text('{"a": 0, "a": 1}', encoding="utf-8")
    new.write_text('{"b": 0}', encoding="utf-8")
    assert main(["transfer-plan", "--old", str(old), "--new", str(new),
                 "--out", str(tmp_path / "p.jsonl")]) == 1
