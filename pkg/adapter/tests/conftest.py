import os
import sys
from pathlib import Path

import pytest

ADAPTER_SRC = Path(__file__).resolve().parents[1] / "src"


@pytest.fixture()
def adapter_cmd():
    """Argv prefix that runs the adapter as a subprocess, installed or not."""
    return [sys.executable, "-m", "usadapter"]


@pytest.fixture(autouse=True)
def _adapter_on_path(monkeypatch):
    existing = os.environ.get("PYTHONPATH", "")
    joined = f"{ADAPTER_SRC}{os.pathsep}{existing}" if existing else str(ADAPTER_SRC)
    monkeypatch.setenv("PYTHONPATH", joined)
