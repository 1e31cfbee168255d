import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_stochastic, toy_channel, toy_fer, toy_settings
from oracles import dense_k_period_value, exhaustive_two_setting_optimum, triple_sum_chain
from prada.adaptation import (
    ChainBuilder,
    SearchTrace,
    ThresholdError,
    ThresholdSet,
    ThresholdTable,
    build_induced_chain,
    compile_threshold_table,
    k_horizon_throughput,
    local_search_thresholds,
    random_threshold_set,
)
from prada.prediction import error_count_distributions, expected_period_throughput


def toy(seed, R, N, M):
    rng = np.random.default_rng(seed)
    ch = toy_channel(random_stochastic(rng, N))
    fer = toy_fer(rng, R, N)
    s = toy_settings(sorted(rng.integers(1, 100, size=R), reverse=True))
    F = error_count_distributions(ch, fer, M)
    return rng, ch, F, expected_period_throughput(F, s)


def test_threshold_validation():
    with pytest.raises(ThresholdError, match="sentinels"):
        ThresholdSet((0, 1), (2, 3), 3)
    with pytest.raises(ThresholdError, match="down"):
        ThresholdSet((-1, 4), (2, 3), 3)
    th = ThresholdSet((-1, 1, 0), (2, 2, 4), 4)
    assert th.free() == (1, 0, 2, 2)
    assert ThresholdSet.from_free(th.free(), 3, 4) == th
    assert th.fractional()[1] == (0.5, 0.5, 1.0)


def test_neighbours_are_feasible_and_ordered():
    th = ThresholdSet((-1, 0), (0, 3), 3)
    nbs = list(th.neighbours())
    # down[1] 0 -> -1 is allowed, 0 -> 1 is allowed; up[0] 0 -> -1 and 0 -> 1
    assert [n.free() for n in nbs] == [(-1, 0), (1, 0), (0, -1), (0, 1)]


def test_two_setting_toy_matches_triple_sum():
    P = np.array([[0.7, 0.3], [0.4, 0.6]])
    F = np.zeros((2, 2, 2, 3))
    F[0, 0, 0] = [0.2, 0.3, 0.1]
    F[0, 0, 1] = [0.1, 0.2, 0.1]
    F[0, 1, 0] = [0.05, 0.05, 0.1]
    F[0, 1, 1] = [0.3, 0.3, 0.2]
    F[1] = F[0][:, :, ::-1]
    from prada.prediction import ErrorCountDistribution

    dist = ErrorCountDistribution(2, F)
    th = ThresholdSet((-1, 0), (1, 2), 2)
    chain = build_induced_chain(dist, toy_channel(P), th)
    np.testing.assert_allclose(chain.transition, triple_sum_chain(F, P, th.down, th.up), atol=1e-15)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_chain_matches_triple_sum(R, N, M, seed):
    rng, ch, F, _ = toy(seed, R, N, M)
    th = random_threshold_set(R, M, rng)
    Q = build_induced_chain(F, ch, th).transition
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(Q, triple_sum_chain(F.F, ch.transition, th.down, th.up), atol=1e-12)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_single_setting_chain_is_matrix_power(N, M, seed):
    _, ch, F, _ = toy(seed, 1, N, M)
    Q = build_induced_chain(F, ch, ThresholdSet.no_switching(1, M)).transition
    np.testing.assert_allclose(Q, np.linalg.matrix_power(ch.transition, M), atol=1e-12)


def test_no_switching_is_block_diagonal():
    _, ch, F, _ = toy(2, 3, 3, 4)
    Q = build_induced_chain(F, ch, ThresholdSet.no_switching(3, 4)).transition
    PM = np.linalg.matrix_power(ch.transition, 4)
    for r in range(3):
        np.testing.assert_allclose(Q[3 * r : 3 * r + 3, 3 * r : 3 * r + 3], PM, atol=1e-12)
    assert Q.sum() == pytest.approx(9.0)


def test_k_horizon_special_cases():
    xi = np.array([[1.0, 2.0], [3.0, 4.0]])
    Q = np.full((4, 4), 0.25)
    assert k_horizon_throughput(Q, xi, 2, 1) == 3.0
    assert k_horizon_throughput(np.eye(4), xi, 3, 7) == 4.0


def test_k_horizon_matches_matrix_powers():
    rng = np.random.default_rng(8)
    Q = random_stochastic(rng, 4)
    xi = rng.random((2, 2))
    assert k_horizon_throughput(Q, xi, 1, 3) == pytest.approx(dense_k_period_value(Q, xi.ravel(), 1, 3), rel=1e-13)


@given(st.integers(2, 4), st.integers(1, 3), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_batched_objective_matches_chain(R, N, M, K, seed):
    rng, ch, F, xi = toy(seed, R, N, M)
    sets = [random_threshold_set(R, M, rng) for _ in range(4)]
    b = ChainBuilder(F, ch)
    start = int(rng.integers(R * N))
    got = b.evaluate(start, np.array([t.down for t in sets]), np.array([t.up for t in sets]), xi, K)
    want = [k_horizon_throughput(b.build(t), xi, start, K) for t in sets]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_single_setting_search():
    _, ch, F, xi = toy(1, 1, 3, 4)
    th, val = local_search_thresholds(F, ch, xi, 2, 3)
    assert th == ThresholdSet.no_switching(1, 4)
    assert val == pytest.approx(k_horizon_throughput(build_induced_chain(F, ch, th), xi, 2, 3))


@pytest.mark.parametrize("seed", range(5))
def test_search_matches_enumeration_on_toy(seed):
    _, ch, F, xi = toy(seed, 2, 2, 4)
    for start in range(4):
        _, val = local_search_thresholds(F, ch, xi, start, 2, restarts=8, rng_seed=seed)
        assert val == pytest.approx(exhaustive_two_setting_optimum(F.F, ch.transition, xi, start, 2), rel=1e-12)


@given(st.integers(2, 4), st.integers(1, 3), st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_search_result_is_local_optimum(R, N, M, K, seed):
    rng, ch, F, xi = toy(seed, R, N, M)
    start = int(rng.integers(R * N))
    trace = SearchTrace()
    th, val = local_search_thresholds(F, ch, xi, start, K, restarts=3, rng_seed=seed, trace=trace)
    for nb in th.neighbours():
        assert k_horizon_throughput(build_induced_chain(F, ch, nb), xi, start, K) <= val + 1e-12
    assert len(trace.paths) == 3
    for path in trace.paths:
        assert all(b > a for a, b in zip(path, path[1:]))
    assert val == max(p[-1] for p in trace.paths)


def test_table_is_deterministic_and_round_trips():
    _, ch, F, xi = toy(4, 3, 2, 3)
    t1 = compile_threshold_table(F, ch, xi, 2, restarts=4, rng_seed=9)
    t2 = compile_threshold_table(F, ch, xi, 2, restarts=4, rng_seed=9, workers=3)
    assert t1.entries == t2.entries
    again = ThresholdTable.from_csv(t1.to_csv(), 3, 2)
    assert again.entries == t1.entries
    for key, v in t1.objective.items():
        assert again.objective[key] == pytest.approx(v, abs=5e-7)
    with pytest.raises(ThresholdError, match="no entry"):
        t1.lookup(5, 0)


def test_single_setting_table():
    _, ch, F, xi = toy(6, 1, 3, 2)
    table = compile_threshold_table(F, ch, xi, 2)
    assert len(table.entries) == 3
    assert set(table.entries.values()) == {ThresholdSet.no_switching(1, 2)}


def test_table_entries_match_enumeration():
    _, ch, F, xi = toy(12, 2, 2, 3)
    table = compile_threshold_table(F, ch, xi, 2, restarts=8)
    for (r, i), val in table.objective.items():
        best = exhaustive_two_setting_optimum(F.F, ch.transition, xi, r * 2 + i, 2)
        assert val == pytest.approx(best, rel=1e-12)


def test_reference_table_differs_across_states(ref_channel, ref_fer, ref_settings):
    F = error_count_distributions(ref_channel, ref_fer, 30)
    xi = expected_period_throughput(F, ref_settings)
    table = compile_threshold_table(F, ref_channel, xi, 4)
    # thresholds depend on the channel state, not only on the setting
    assert len({table.lookup(1, i) for i in range(7)}) > 1
