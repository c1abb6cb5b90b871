import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _strict_float_errors():
    # surface NaN/overflow in library code instead of silently propagating
    with np.errstate(invalid="raise", divide="raise", over="raise"):
        yield
