import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from markov_ldp.markov_core import stationary, structure_check
from markov_ldp.models import (
    GridSpec,
    GridTooNarrowError,
    build_model,
    canned_chains,
    coboundary_example,
    cycle,
    ou_grid,
    ou_kernel,
    random_chain,
    smoluchowski_generator_formula,
    two_cluster,
    two_state,
)


def test_two_state_definition():
    assert np.array_equal(two_state(0.1, 0.2).rows, [[0.9, 0.1], [0.2, 0.8]])


def test_cycle_period():
    assert structure_check(cycle(2)).period == 2


def test_random_chains_irreducible_aperiodic():
    for seed in range(100):
        rep = structure_check(random_chain(int(2 + seed % 9), density=0.2, seed=seed))
        assert rep.irreducible and rep.aperiodic


@pytest.mark.parametrize("seed", range(5))
def test_generated_chains_structure(seed):
    for P in (two_cluster(6, 0.05, seed), coboundary_example(6, seed)[0]):
        rep = structure_check(P)
        assert rep.irreducible and rep.aperiodic


def test_ou_full_reversion_rows_equal():
    P, _ = ou_kernel(1.0, 1.0, GridSpec(-8, 8, 101))
    assert np.allclose(P.rows, P.rows[0])


def test_ou_symmetric_stationary():
    m = ou_grid(0.5, 1.0, GridSpec(-8, 8, 201))
    pi = stationary(m.P)
    assert np.max(np.abs(pi - pi[::-1])) <= 1e-8
    assert structure_check(m.P).irreducible


def test_ou_narrow_grid_rejected():
    with pytest.raises(GridTooNarrowError, match="widen"):
        ou_grid(0.1, 2.0, GridSpec(-8, 8, 201))


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_ou_dv3_certificate(delta, sigma):
    m = ou_grid(delta, sigma)
    P, V, W = m
    assert m.certificate.holds and m.eps0 > 0
    assert np.allclose(V, 1 + m.eps0 * m.grid.x**2)
    assert np.all(W >= 1)
    # C is a central sublevel set
    assert np.all(np.abs(m.grid.x[list(m.C)]) <= 0.25 * (m.grid.hi - m.grid.lo))


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_ou_fixed_grid_where_mass_rule_allows(delta, sigma):
    grid = GridSpec(-8, 8, 201)
    try:
        ou_kernel(delta, sigma, grid)
    except GridTooNarrowError:
        # the truncation precondition rules this pair out on [-8, 8]
        with pytest.raises(GridTooNarrowError):
            ou_grid(delta, sigma, grid)
        return
    assert ou_grid(delta, sigma, grid).certificate.holds


def test_smoluchowski_ou():
    d, s = 0.7, 1.3
    for x in (-2.0, 0.0, 0.5, 3.0):
        got = smoluchowski_generator_formula(d * x, d, s)
        assert got == -0.5 * (d * x) ** 2 / (s * s) + 0.5 * d
    assert smoluchowski_generator_formula(0.0, 2.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        smoluchowski_generator_formula(1.0, 1.0, 0.0)


@given(st.floats(0.05, 1), st.floats(0.1, 3))
def test_smoluchowski_diverges_for_ou(d, s):
    vals = [smoluchowski_generator_formula(d * x, d, s) for x in (10.0, 1e2, 1e4)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < -1e3


def test_registry():
    names = list(canned_chains())
    assert "two_state" in names and names == sorted(names)
    assert np.array_equal(build_model("two_state", {"p": 0.1, "q": 0.2}).rows, two_state(0.1, 0.2).rows)
    with pytest.raises(KeyError):
        build_model("nope")
    with pytest.raises(TypeError):
        build_model("two_state", {"r": 1})
