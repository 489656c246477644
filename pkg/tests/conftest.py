import numpy as np
import pytest

from symdef.expr import MetaFeatures
from symdef.surrogate import ForestSettings, train_surrogate
from symdef.synthetic import planted_problem

SMALL_FOREST = ForestSettings(n_trees=30)


def make_mf(**overrides):
    base = dict(n=1000, po=10, p=12, m=2, rc=0.1, mcp=0.6, mkd=0.01, xvar=1.0)
    base.update(overrides)
    return MetaFeatures(**base)


@pytest.fixture
def mf():
    return make_mf()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def planted_small():
    """Six planted datasets with small trained forests: (table, metafeatures, surrogates by id)."""
    table, mfs = planted_problem(n_datasets=6, n_configs=200, seed=3)
    surrogates = {d: train_surrogate(table, d, settings=SMALL_FOREST, seed=i) for i, d in enumerate(table.dataset_ids)}
    return table, mfs, surrogates


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
