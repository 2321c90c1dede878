import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from algebroid_dynamics.models import load_model  # noqa: E402


@pytest.fixture(scope="session")
def models():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_model(name)
        return cache[name]

    return get
