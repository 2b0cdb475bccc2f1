import functools
import math

import numpy as np
import pytest

from gmae.characteristics import solve_surface
from gmae.model import AlphaSystem

LOG2 = math.log(2.0)

# (alpha, mode, seed template, mu0, s_range, t_range, special point)
EXAMPLES = {
    "q": ("q", "generic", "t^{n}", 0.0, (-0.5, 0.5), (-0.5, 0.5), (0.0, 0.0)),
    "nongeneric": ("(q - y)/x", "nongeneric", "t^2 + t^{n}", 0.3, (0.3, 0.8), (-0.3, 0.3), (0.5, 0.0)),
    "beaks": ("p + q^2", "generic", "(t - log(2))^4", -1.0, (-0.5, 0.5), (0.2, 1.2), (0.0, LOG2)),
}


@functools.lru_cache(maxsize=None)
def alpha_system(alpha: str) -> AlphaSystem:
    return AlphaSystem(alpha)


@functools.lru_cache(maxsize=None)
def example_surface(name: str, n: int = 4, grid: tuple = (51, 51)):
    """Surfaces shared across test modules; building one takes about a second."""
    alpha, mode, xi, mu0, s_range, t_range, _ = EXAMPLES[name]
    return solve_surface(alpha_system(alpha), mode, xi.format(n=n), mu0, s_range, t_range, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
