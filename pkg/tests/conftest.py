import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One explicit PASS/FAIL line per acceptance criterion at the end of
    the run, so the gate is readable without scrolling the full log."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in getattr(rep, "nodeid", "") and rep.when == "call":
                name = rep.nodeid.split("::")[-1]
                rows.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(rows):
            terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def tmp_corpus(tmp_path):
    """Factory writing JSONL sub-corpora plus a manifest; returns the
    manifest path."""
    import json

    def build(subcorpora: dict[str, list[dict]], name="manifest.json"):
        entries = []
        for sub_id, docs in subcorpora.items():
            path = tmp_path / f"{sub_id}.jsonl"
            with open(path, "w", encoding="utf-8") as fh:
                for doc in docs:
                    fh.write(json.dumps(doc) + "\n")
            entries.append({"subcorpus_id": sub_id, "path": f"{sub_id}.jsonl"})
        manifest_path = tmp_path / name
        manifest_path.write_text(json.dumps({"entries": entries}), encoding="utf-8")
        return manifest_path

    return build
