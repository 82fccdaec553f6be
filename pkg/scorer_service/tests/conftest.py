"""Session fixtures: a cached fixture model and a live server subprocess.

The model is trained once into tests/artifacts/ and reused across runs, so
only the first invocation pays the ~1 minute training cost.
"""

import importlib.util
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
import requests

# running the engine suite without this package installed should not break
# collection of the repository-wide test run
collect_ignore_glob = (
    ["test_*.py"] if importlib.util.find_spec("mlm_scorer_service") is None else []
)

ARTIFACTS = Path(__file__).parent / "artifacts"
STARTUP_TIMEOUT = 90.0


@pytest.fixture(scope="session")
def model_dir() -> str:
    out = ARTIFACTS / "tiny-mlm"
    if not (out / "config.json").exists():
        from mlm_scorer_service.tiny_train import train_model

        train_model(out)
    return str(out)


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="session")
def service(model_dir: str):
    """Base URL of a server subprocess; torn down after the session."""
    port = _free_port()
    log_path = ARTIFACTS / "server.log"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as log:
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "mlm_scorer_service.serve",
                "--model",
                model_dir,
                "--port",
                str(port),
            ],
            stdout=log,
            stderr=log,
        )
    url = f"http://127.0.0.1:{port}"
    try:
        deadline = time.monotonic() + STARTUP_TIMEOUT
        while True:
            try:
                if requests.get(f"{url}/info", timeout=2).status_code == 200:
                    break
            except requests.ConnectionError:
                pass
            if proc.poll() is not None:
                raise RuntimeError(
                    f"server exited with code {proc.returncode}; "
                    f"log:\n{log_path.read_text(encoding='utf-8')}"
                )
            if time.monotonic() > deadline:
                raise RuntimeError(
                    f"server not reachable after {STARTUP_TIMEOUT}s; "
                    f"log:\n{log_path.read_text(encoding='utf-8')}"
                )
            time.sleep(0.2)
        yield url
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
