import os

# one BLAS thread keeps training runs bit-reproducible
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from helpers import make_pair


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_pairs():
    return [
        make_pair("name[Giraffe], eatType[pub]", "Giraffe is a pub.", 0),
        make_pair("name[Giraffe], eatType[pub], area[riverside]", "Giraffe is a pub in the riverside area.", 1),
        make_pair("name[Blue Spice], area[city centre]", "Blue Spice is in the city centre area.", 2),
    ]


def pytest_terminal_summary(terminalreporter):
    import sys

    test_acceptance = sys.modules.get("test_acceptance")
    if test_acceptance is not None and test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
