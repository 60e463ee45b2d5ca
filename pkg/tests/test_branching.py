import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branching import (
    MultiScalePlan,
    branching_function,
    cluster_branching,
    is_uniform,
    lipschitz_partition,
    multiscale_decompose,
    partition_conclusions,
    uniformity_profile,
    uniformize,
    uniformize_with_report,
)
from dyadic_core import CellSet
from errors import DomainError, ParameterError


def diagonal(k, width):
    side = 1 << k
    return CellSet.from_coords(2, k, [(i, j) for i in range(side) for j in range(side) if 0 <= j - i < width])


def random_profile(increments):
    x = np.linspace(0.0, 1.0, len(increments) + 1)
    f = np.concatenate([[0.0], np.cumsum(increments)]) / len(increments)
    return x, f


# ---- uniformize ----
def test_full_grid_is_already_uniform():
    E = CellSet.full(2, 4)
    assert uniformize(E) == E
    assert is_uniform(E)


def test_majority_half_wins():
    left = CellSet.from_coords(2, 5, [(i, j) for i in range(16) for j in range(32)])
    E = left | CellSet.from_coords(2, 5, [(30, 3)])
    assert uniformize(E) == left


def test_random_half_density_uniformizes(rng):
    E = CellSet(2, 6, rng.choice(4096, size=2048, replace=False))
    res = uniformize_with_report(E)
    assert res.cells <= E
    assert is_uniform(res.cells)
    assert all(hi < 2 * lo for _, lo, hi in uniformity_profile(res.cells))
    assert res.ratio == pytest.approx(len(res.cells) / len(E))
    assert res.ratio >= 1 / res.ledger.total - 1e-12


def test_uniformize_empty():
    with pytest.raises(DomainError):
        uniformize(CellSet(2, 3))


# ---- branching functions ----
def test_full_grid_branching():
    beta = branching_function(CellSet.full(2, 5))
    np.testing.assert_allclose(beta.values, 2 * np.asarray(beta.xs))
    assert beta.is_valid()


def test_single_cell_branching():
    beta = branching_function(CellSet.from_coords(2, 5, [(3, 3)]))
    assert all(v == 0 for v in beta.values)


def test_line_neighbourhood_branching():
    beta = branching_function(diagonal(6, 2))
    assert np.all(np.abs(np.asarray(beta.values) - np.asarray(beta.xs)) <= 1 / 6 + 1e-12)


def test_branching_of_uniformized_set_is_monotone(rng):
    E = uniformize(CellSet(2, 6, rng.choice(4096, size=700, replace=False)))
    beta = branching_function(E)
    steps = np.diff(beta.values)
    assert (steps >= 0).all() and (steps <= 2 / 6 + 1e-12).all()


# ---- clusters ----
def test_cluster_of_copies():
    E = diagonal(5, 2)
    res = cluster_branching([E] * 10)
    assert len(res.members) == 10


def test_cluster_drops_outlier():
    family = [CellSet.full(2, 4)] * 8 + [CellSet.from_coords(2, 4, [(0, 0)])]
    res = cluster_branching(family)
    assert res.members == list(range(8))


def test_cluster_members_are_close(rng):
    family = [uniformize(CellSet(2, 5, rng.choice(1024, size=int(m), replace=False)))
              for m in rng.integers(50, 900, size=12)]
    res = cluster_branching(family)
    rep = np.asarray(res.branching.values)
    for E in res.subfamily:
        assert np.abs(np.asarray(branching_function(E).values) - rep).max() <= res.eps + 1e-12
    with pytest.raises(DomainError):
        cluster_branching([])


# ---- lipschitz partition ----
def test_linear_profile_single_block():
    x = np.linspace(0, 1, 33)
    plan = lipschitz_partition((x, x), 0.1)
    assert plan.H == 1 and plan.A == (0.0, 1.0)
    assert plan.slopes[0] >= 1 - 0.1


def test_convex_kink_two_blocks():
    x = np.linspace(0, 1, 65)
    f = x / 2 + np.maximum(x - 0.5, 0) / 2
    plan = lipschitz_partition((x, f), 0.05)
    assert plan.H == 2
    assert plan.A[1] == pytest.approx(0.5)
    assert plan.slopes[0] < plan.slopes[1]


def test_zero_profile():
    x = np.linspace(0, 1, 9)
    plan = lipschitz_partition((x, np.zeros_like(x)), 0.1)
    assert plan.H == 1 and plan.slopes == (0.0,)


def test_partition_rejects_bad_input():
    x = np.linspace(0, 1, 5)
    with pytest.raises(ParameterError):
        lipschitz_partition((x, 2 * x), 0.1)
    with pytest.raises(ParameterError):
        lipschitz_partition((x, x), 0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.sampled_from([0.1, 0.05]))
def test_partition_conclusions_hold(increments, eta):
    x, f = random_profile(increments)
    plan = lipschitz_partition((x, f), eta)
    assert partition_conclusions(x, f, plan) == []
    assert plan.A[0] == 0.0 and plan.A[-1] == pytest.approx(1.0)


def test_plan_json_round_trip():
    x = np.linspace(0, 1, 65)
    plan = lipschitz_partition((x, x / 2 + np.maximum(x - 0.5, 0) / 2), 0.05)
    assert MultiScalePlan.from_json(plan.to_json()) == plan


# ---- multi-scale decomposition ----
def test_full_grid_decomposition():
    rep = multiscale_decompose([CellSet.full(2, 4)], 0.1)
    assert rep.passed
    assert rep.plan.H == 1
    assert rep.plan.slopes[0] == pytest.approx(2.0, abs=0.1)


def test_line_neighbourhood_slope():
    rep = multiscale_decompose([diagonal(6, 3)], 0.1)
    assert abs(rep.plan.slopes[-1] - 1.0) <= 0.3


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_uniformized_random_family(seed):
    rng = np.random.default_rng([seed, 0])
    E = uniformize(CellSet(2, 6, rng.choice(4096, size=2048, replace=False)))
    rep = multiscale_decompose([E], 0.1)
    assert rep.passed, rep.failures
    assert {it["item"] for it in rep.items} == {1, 2, 3, 4}


def test_block_length_bound_uses_eta():
    rep = multiscale_decompose([diagonal(6, 3)], 0.1)
    ones = [it for it in rep.items if it["item"] == 1]
    assert ones
    for it in ones:
        assert it["bound"] == pytest.approx(0.1 ** 20 / 0.1, rel=1e-12)
        assert it["ok"]


@pytest.mark.slow
def test_uniformized_random_families_all_items():
    for seed in range(20):
        rng = np.random.default_rng([seed, 0])
        E = uniformize(CellSet(2, 6, rng.choice(4096, size=2048, replace=False)))
        rep = multiscale_decompose([E], 0.1)
        assert rep.passed, (seed, rep.failures)
        assert {it["item"] for it in rep.items} == {1, 2, 3, 4}
