import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from app.services.capabilities import CapabilityLexicon  # noqa: E402

RULES_DIR = ROOT / "fleet_rules"


@pytest.fixture
def rules_dir() -> Path:
    return RULES_DIR


@pytest.fixture
def lexicon() -> CapabilityLexicon:
    return CapabilityLexicon.load(RULES_DIR)
