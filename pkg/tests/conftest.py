import pytest

from balancecheck import catalog
from balancecheck.fields import Grid, ScalarField
from balancecheck.models import BalanceLawModel, Sampling


@pytest.fixture
def line_grid() -> Grid:
    """[-1, 2] with 96 cells (h = 1/32)."""
    return Grid.from_bounds((-1.0,), (2.0,), 96)


@pytest.fixture
def indicator(line_grid) -> ScalarField:
    return ScalarField.sample(line_grid, catalog.initial_data("indicator", None, 1))


@pytest.fixture
def bump(line_grid) -> ScalarField:
    return ScalarField.sample(line_grid, catalog.initial_data("cos2_bump", {"center": 0.5}, 1))


@pytest.fixture
def burgers() -> BalanceLawModel:
    return BalanceLawModel.named("burgers", None, 1)


@pytest.fixture
def sampling() -> Sampling:
    return Sampling(points=17, rounds=1)

