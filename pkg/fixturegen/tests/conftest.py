import json
import shutil
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
FIXTURES_DIR = REPO_ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    if not (FIXTURES_DIR / "manifest.json").exists():
        pytest.skip("committed fixtures not present")
    return FIXTURES_DIR


@pytest.fixture(scope="session")
def manifest(fixtures_dir) -> dict:
    return json.loads((fixtures_dir / "manifest.json").read_text())


@pytest.fixture(scope="session")
def splitinfer_exe() -> str:
    exe = shutil.which("splitinfer")
    if exe is None:
        pytest.skip("splitinfer CLI not installed")
    return exe
