import hypothesis
import hypothesis.strategies as st
import numpy as np
import pytest

from markov_ldp.models import random_chain, two_state

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@st.composite
def chains(draw, min_n=2, max_n=8):
    """Irreducible aperiodic random kernel with a random functional."""
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**31 - 1))
    density = draw(st.floats(0.2, 1.0))
    P = random_chain(n, density, seed)
    F = np.random.default_rng(seed + 7).normal(size=n)
    return P, F


@pytest.fixture
def benchmark():
    """two_state(0.1, 0.2) with the occupation indicator of state 1."""
    return two_state(0.1, 0.2), np.array([0.0, 1.0])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
