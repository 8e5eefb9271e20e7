import numpy as np
import pytest

from balance_forge.core import CovariateMatrix, standardize


@pytest.fixture
def four():
    """Raw covariate [1, 2, 3, 4] and its standardization."""
    x = CovariateMatrix(np.array([[1.0], [2.0], [3.0], [4.0]]))
    return x, standardize(x)


@pytest.fixture
def criterion(request, capsys):
    """Report one acceptance criterion as a PASS/FAIL line, then assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k:>2}: {detail}"
        lines.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
