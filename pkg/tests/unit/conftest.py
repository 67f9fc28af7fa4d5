from __future__ import annotations

import pytest

from app.domain import ProblemInstance
from tests.instances import bitcoin_pools, small_pools


@pytest.fixture
def small_instance() -> ProblemInstance:
    return small_pools()


@pytest.fixture
def bitcoin_instance() -> ProblemInstance:
    return bitcoin_pools()
