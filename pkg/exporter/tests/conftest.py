from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
CHECKPOINT = Path(__file__).resolve().parents[1] / "fixtures" / "tinycnn.pt"
COMMITTED_FIXTURES = REPO_ROOT / "tests" / "fixtures" / "tinycnn"


@pytest.fixture
def checkpoint_path() -> Path:
    return CHECKPOINT


@pytest.fixture
def committed_fixtures() -> Path:
    return COMMITTED_FIXTURES
