import pytest

from heterocomm import builtin_machine

import model_reference


@pytest.fixture
def summit():
    return builtin_machine("summit")


@pytest.fixture
def two_node():
    return model_reference.make_two_node()


@pytest.fixture
def continuous():
    return model_reference.make_continuous()
