import numpy as np
import pytest

from composite_dg.geometry import Dirichlet, Rect, build_coarse_grid, classify_edges
from composite_dg.space import CompositeSpace

UNIT = Rect(0.0, 1.0, 0.0, 1.0)


def two_layer_space(na=3, nb=2, ny=2, cut=0.5, boundary=None):
    """Two stacked layers split at ``y = cut`` with ``na``/``nb`` transverse cells."""
    g = build_coarse_grid(UNIT, [], [cut])
    if boundary is None:
        boundary = {"bottom": Dirichlet("bottom"), "top": Dirichlet("top")}
    g = classify_edges(g, boundary)
    return CompositeSpace.build(g, [(na, ny), (nb, ny)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report_criterion():
    """Record and print one pass/fail line for an acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
