from __future__ import annotations

import pytest

from talklearn.config import default_lexicon


@pytest.fixture(scope="session")
def lexicon():
    return default_lexicon()
