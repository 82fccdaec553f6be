#!/usr/bin/env python3
"""Regenerate the committed regression pins under tests/data/.

Run from the repository root after an intentional behavior change, then
review the diff before committing:

    python3 scripts/make_goldens.py
"""

import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from test_goldens import DATA_DIR, compute_golden_eval, compute_golden_mlm  # noqa: E402


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        goldens = {
            "golden_eval.json": compute_golden_eval(Path(tmp)),
            "golden_mlm.json": compute_golden_mlm(Path(tmp)),
        }
    for name, payload in goldens.items():
        path = DATA_DIR / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
