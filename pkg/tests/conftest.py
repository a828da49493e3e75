import pytest

from guidedppl import enumerate_paths
from guidedppl.models import make_expr_model, three_dice


@pytest.fixture(scope="session")
def dice_pe():
    return enumerate_paths(three_dice)


@pytest.fixture(scope="session")
def expr2_pe():
    return enumerate_paths(make_expr_model(2))


@pytest.fixture(scope="session")
def expr3_pe():
    return enumerate_paths(make_expr_model(3))
