"""Define common test utilities."""
import json
from pathlib import Path

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def load_fixture(filename):
    """Load a fixture as text."""
    return (FIXTURES_DIR / filename).read_text(encoding="utf-8")


def load_json_fixture(filename):
    """Load a JSON fixture."""
    return json.loads(load_fixture(filename))
