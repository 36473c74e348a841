import sys
import numpy as np
import pytest

from pogs import _kernels, _pycore
from pogs.model import Utility, random_spec

BACKENDS = _kernels.backends()


@pytest.fixture(params=BACKENDS, ids=lambda m: m.NAME)
def backend(request):
    return request.param


@pytest.fixture
def micro():
    return random_spec(11, 2, 2, 2, 2, 0.5, Utility.linear())


def random_policy(rng, adm):
    """History-dependent random mixed policy, memoized per history."""
    table = {}

    def rule(h):
        if h not in table:
            v = rng.random(adm.shape[1]) * adm[h[-1]]
            table[h] = v / v.sum()
        return table[h]
    return rule


def pure_python():
    return _pycore


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
