from __future__ import annotations

import pytest

from tilepairs.fetch import reset_rate_limiters
from tilepairs.region import Region


@pytest.fixture(autouse=True)
def _fresh_rate_limiters():
    reset_rate_limiters()
    yield
    reset_rate_limiters()


def square_region(west: float, south: float, width: float, height: float, name: str = "square") -> Region:
    ring = (
        (west, south),
        (west + width, south),
        (west + width, south + height),
        (west, south + height),
    )
    return Region(name=name, rings=(ring,))


@pytest.fixture
def unit_square() -> Region:
    return square_region(0.0, 0.0, 1.0, 1.0, name="unit")
