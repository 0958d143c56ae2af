import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from fedsel.distance import DistanceMatrix, dub, full_refresh
from fedsel.exceptions import ConfigurationError, ContractViolation
from fedsel.fairness import FairnessState
from fedsel.selector import (
    DivFLSelector,
    LongFedSelector,
    RandomSelector,
    SelectionDecision,
    StrategyConfig,
    UniformFairSelector,
    baseline_select,
    brute_force_select,
    greedy_select,
    make_selector,
    objective_g,
    objective_g_bar,
    uniform_fair_wrap,
)

import oracles
from conftest import dyadic_instance, random_matrix, random_state


def cfg(K, V=0.8, norm="unsquared", **kw):
    return StrategyConfig("longfed", V=V, K=K, objective_norm=norm, **kw)


def oracle_args(matrix, state, norm):
    D = matrix.values(norm).tolist()
    return D, state.Z.tolist(), state.Q.tolist(), state.frequencies.tolist(), state.epsilon, state.delta


def subsets(n):
    for r in range(n + 1):
        yield from (set(c) for c in itertools.combinations(range(n), r))


# --- objective -------------------------------------------------------------

@given(st.integers(0, 10 ** 6))
def test_g_at_v_one_is_dub(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    m, s = random_matrix(rng, n), random_state(rng, n)
    S = list(rng.choice(n, int(rng.integers(1, n + 1)), replace=False))
    for norm in ("squared", "unsquared"):
        assert objective_g(S, m, s, 1.0, norm) == pytest.approx(dub(m, S, norm)[0], rel=1e-12, abs=1e-12)


def test_g_at_v_zero_ignores_distances():
    rng = np.random.default_rng(0)
    s = random_state(rng, 6, epsilon=math.inf)
    a, b = random_matrix(rng, 6), random_matrix(rng, 6)
    for S in ([0], [1, 4], [0, 2, 3, 5]):
        assert objective_g(S, a, s, 0.0) == objective_g(S, b, s, 0.0)


def test_g_hand_instance_matches_term_by_term_evaluation():
    d = np.array([[0, 1, 4, 2], [1, 0, 3, 5], [4, 3, 0, 1], [2, 5, 1, 0]], dtype=float)
    m = DistanceMatrix.from_distances(d, norm="unsquared")
    s = FairnessState(np.array([0.5, 0.0, 1.25, 0.25]), np.array([0.0, 0.75, 0.0, 0.5]),
                      np.array([3, 1, 0, 2]), 4, epsilon=2.5, delta=0.01)
    for S in itertools.combinations(range(4), 2):
        want = oracles.g_value(set(S), d.tolist(), s.Z.tolist(), s.Q.tolist(),
                               s.frequencies.tolist(), 2.5, 0.01, 0.8)
        assert objective_g(S, m, s, 0.8) == pytest.approx(want, abs=1e-12)


def test_g_rejects_empty_subset():
    rng = np.random.default_rng(1)
    with pytest.raises(ContractViolation):
        objective_g([], random_matrix(rng, 3), random_state(rng, 3), 0.5)


def test_g_bar_empty_is_zero_and_matches_oracle():
    rng = np.random.default_rng(2)
    m, s = random_matrix(rng, 5), random_state(rng, 5, epsilon=1.0)
    assert objective_g_bar([], m, s, 0.7) == 0.0
    args = oracle_args(m, s, "unsquared")
    for S in subsets(5):
        assert objective_g_bar(S, m, s, 0.7) == pytest.approx(oracles.g_bar(S, *args, 0.7), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_g_bar_submodular_exhaustive(seed):
    rng = np.random.default_rng(seed)
    n = 6
    m, s = random_matrix(rng, n), random_state(rng, n, epsilon=1.5)
    V = float(rng.uniform(0, 1))
    value = {frozenset(S): objective_g_bar(S, m, s, V) for S in subsets(n)}
    for B in value:
        for A in (frozenset(a) for r in range(len(B) + 1) for a in itertools.combinations(sorted(B), r)):
            for k in set(range(n)) - B:
                gain_a = value[A | {k}] - value[A]
                gain_b = value[B | {k}] - value[B]
                assert gain_a >= gain_b - 1e-12


@given(st.integers(0, 10 ** 6))
def test_g_bar_submodular_sampled_triples(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(7, 65))
    m, s = random_matrix(rng, n, dim=4), random_state(rng, n, epsilon=1.0)
    B = set(rng.choice(n, int(rng.integers(1, n)), replace=False).tolist())
    A = {b for b in B if rng.random() < 0.5}
    k = int(rng.choice(sorted(set(range(n)) - B)))
    g = lambda S: objective_g_bar(S, m, s, 0.8)
    assert g(A | {k}) - g(A) >= g(B | {k}) - g(B) - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_g_bar_monotone_without_fairness_pressure(seed):
    rng = np.random.default_rng(seed)
    n = 8
    m = random_matrix(rng, n)
    cold = FairnessState.initial(n)
    busy = random_state(rng, n)
    for state, V in ((cold, 0.6), (busy, 1.0)):
        value = {frozenset(S): objective_g_bar(S, m, state, V) for S in subsets(n)}
        for S, v in value.items():
            for k in set(range(n)) - S:
                assert value[S | {k}] >= v - 1e-12


def test_g_bar_can_decrease_when_queues_penalise_a_pick():
    # client 1 sits on a large Z queue, so adding it costs more fairness than it saves distance
    m = DistanceMatrix.from_distances([[0, 1], [1, 0]], norm="unsquared")
    s = FairnessState(np.array([0.0, 10.0]), np.zeros(2), np.array([0, 5]), 5, epsilon=2.0, delta=0.0)
    assert objective_g_bar({0, 1}, m, s, 0.5) < objective_g_bar({0}, m, s, 0.5)


# --- greedy ----------------------------------------------------------------

def test_greedy_k_equals_n():
    rng = np.random.default_rng(3)
    d = greedy_select(random_matrix(rng, 7), random_state(rng, 7), cfg(7))
    assert d.subset == list(range(7))
    assert sum(d.weights.values()) == 7


@given(st.integers(0, 10 ** 6))
def test_greedy_matches_textbook_greedy_on_exact_instances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    K = int(rng.integers(1, n + 1))
    m, s = dyadic_instance(rng, n)
    V = float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
    got = greedy_select(m, s, cfg(K, V, "squared")).subset
    assert got == oracles.greedy(*oracle_args(m, s, "squared"), V, K)


@given(st.integers(0, 10 ** 6))
def test_cold_start_greedy_is_pure_facility_location(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    K = int(rng.integers(1, n + 1))
    m, _ = dyadic_instance(rng, n)
    cold = FairnessState.initial(n, epsilon=2.0, delta=0.25)
    V = float(rng.choice([0.25, 0.5, 1.0]))
    assert greedy_select(m, cold, cfg(K, V, "squared")).subset == \
        greedy_select(m, cold, cfg(K, 1.0, "squared"), use_queues=False).subset


def test_greedy_approximation_guarantee_small_instances():
    rng = np.random.default_rng(4)
    bound = 1 - 1 / math.e
    for _ in range(40):
        n, K = 8, 3
        m, s = random_matrix(rng, n), random_state(rng, n, epsilon=1.0)
        c = cfg(K, float(rng.uniform(0, 1)))
        greedy_val = objective_g_bar(greedy_select(m, s, c).subset, m, s, c.V)
        opt = brute_force_select(m, s, c)
        assert greedy_val >= bound * objective_g_bar(opt.subset, m, s, c.V) - 1e-12


@given(st.integers(0, 10 ** 6), st.integers(-3, 3))
def test_greedy_invariant_under_power_of_two_scaling(seed, power):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    K = int(rng.integers(1, n + 1))
    m, s = random_matrix(rng, n), random_state(rng, n, epsilon=2.0)
    c = 4.0 ** power
    scaled_state = FairnessState(s.Z * c, s.Q * c, s.counts, s.round, s.epsilon * c, s.delta)
    a = greedy_select(m, s, cfg(K, 0.8, "squared"))
    b = greedy_select(m.scaled(c), scaled_state, cfg(K, 0.8, "squared"))
    assert a.subset == b.subset


@given(st.integers(1, 30), st.data())
def test_greedy_evaluation_count(n, data):
    K = data.draw(st.integers(1, n))
    rng = np.random.default_rng(n)
    d = greedy_select(random_matrix(rng, n), random_state(rng, n), cfg(K))
    assert d.n_evaluations == sum(n - k for k in range(K))
    assert len(set(d.subset)) == K


def test_greedy_is_deterministic():
    rng = np.random.default_rng(5)
    m, s = random_matrix(rng, 30), random_state(rng, 30)
    a = greedy_select(m, s, cfg(6))
    b = greedy_select(m, s, cfg(6))
    assert a.subset == b.subset and a.weights == b.weights and a.objective_value == b.objective_value


def test_greedy_ties_go_to_lowest_index():
    m = DistanceMatrix.from_distances(np.zeros((4, 4)))
    d = greedy_select(m, FairnessState.initial(4), cfg(2))
    assert d.subset == [0, 1]


def test_greedy_objective_value_is_g():
    rng = np.random.default_rng(6)
    m, s = random_matrix(rng, 9), random_state(rng, 9, epsilon=1.0)
    d = greedy_select(m, s, cfg(3))
    assert d.objective_value == pytest.approx(objective_g(d.subset, m, s, 0.8), abs=1e-12)


def test_integer_auxiliary_biases_towards_that_client():
    # with client 0 as a free auxiliary it never needs to be picked, so greedy skips it
    d = np.array([[0, 1, 9], [1, 0, 9], [9, 9, 0]], dtype=float)
    m = DistanceMatrix.from_distances(d, norm="unsquared")
    cold = FairnessState.initial(3)
    assert greedy_select(m, cold, cfg(1, 1.0)).subset == [0]
    assert greedy_select(m, cold, cfg(1, 1.0, auxiliary=0)).subset == [2]
    # when e is already in S the transform is G({e}) - G(S)
    s = random_state(np.random.default_rng(7), 3, epsilon=5.0)
    want = objective_g({0}, m, s, 0.5) - objective_g({0, 2}, m, s, 0.5)
    assert objective_g_bar({0, 2}, m, s, 0.5, auxiliary=0) == pytest.approx(want, abs=1e-12)


def test_config_validation():
    rng = np.random.default_rng(8)
    m, s = random_matrix(rng, 4), random_state(rng, 4)
    for bad in (cfg(0), cfg(5), cfg(2, V=1.5), cfg(2, norm="cubed"), StrategyConfig("longfed")):
        with pytest.raises(ConfigurationError):
            greedy_select(m, s, bad)


# --- brute force -----------------------------------------------------------

def test_brute_force_full_set_and_guard():
    rng = np.random.default_rng(9)
    m, s = random_matrix(rng, 5), random_state(rng, 5)
    assert brute_force_select(m, s, cfg(5)).subset == list(range(5))
    big = random_matrix(rng, 40)
    with pytest.raises(ConfigurationError):
        brute_force_select(big, random_state(rng, 40), cfg(10))


def test_brute_force_single_representative():
    d = np.array([[0, 1, 4, 3], [1, 0, 9, 2], [4, 9, 0, 6], [3, 2, 6, 0]], dtype=float)
    m = DistanceMatrix.from_distances(d)
    cold = FairnessState.initial(4)
    got = brute_force_select(m, cold, cfg(1, 1.0, "squared"))
    costs = [d[:, j].sum() for j in range(4)]
    assert got.subset == [int(np.argmin(costs))]
    assert got.objective_value == min(costs)


def test_brute_force_matches_oracle_and_greedy_on_planted_clusters():
    # members sit at offsets -r, 0, +r along an axis orthogonal to the cluster plane,
    # so each cluster's middle member is strictly the best representative
    centers = np.array([[0, 0, 0], [10, 0, 0], [0, 10, 0]], dtype=float)
    offsets = np.array([[0, 0, -0.1], [0, 0, 0], [0, 0, 0.1]])
    G = (centers[:, None, :] + offsets[None]).reshape(9, 3)
    m = full_refresh(G)
    s = FairnessState.initial(9)
    exact = brute_force_select(m, s, cfg(3))
    assert exact.subset == greedy_select(m, s, cfg(3)).subset == [1, 4, 7]
    D = m.dist.tolist()
    want, _ = oracles.brute_force_min_g(D, [0] * 9, [0] * 9, [0] * 9, 0.3, 0.01, 0.8, 3)
    assert exact.subset == want


# --- baselines -------------------------------------------------------------

def test_random_with_k_equals_n():
    d = baseline_select("random", None, None, np.zeros(6), StrategyConfig("random", K=6), np.random.default_rng(0))
    assert d.subset == list(range(6))
    assert all(w == 1.0 for w in d.weights.values())


def test_power_of_choice_with_d_equal_k_is_random():
    counts = np.zeros(20)
    losses = np.arange(20.0)
    a = baseline_select("powerd", losses, None, counts, StrategyConfig("powerd", K=4, d_candidates=4),
                        np.random.default_rng(1))
    b = baseline_select("random", None, None, counts, StrategyConfig("random", K=4), np.random.default_rng(1))
    assert a.subset == b.subset


def test_power_of_choice_full_pool_takes_top_losses():
    losses = np.random.default_rng(2).permutation(12).astype(float)
    d = baseline_select("powerd", losses, None, np.zeros(12), StrategyConfig("powerd", K=3, d_candidates=12),
                        np.random.default_rng(3))
    assert d.subset == sorted(np.argsort(-losses)[:3].tolist())
    assert all(w == 4.0 for w in d.weights.values())


def test_power_of_choice_rejects_small_pool():
    with pytest.raises(ConfigurationError):
        baseline_select("powerd", np.zeros(5), None, np.zeros(5), StrategyConfig("powerd", K=3, d_candidates=2),
                        np.random.default_rng(0))


def test_loss_guided_prefers_high_loss():
    losses = np.zeros(10)
    losses[7] = 5.0
    hits = sum(7 in baseline_select("afl", losses, None, np.zeros(10), StrategyConfig("afl", K=1),
                                     np.random.default_rng(t)).subset for t in range(400))
    p7 = math.exp(5) / (math.exp(5) + 9)
    assert abs(hits / 400 - p7) < 4 * math.sqrt(p7 * (1 - p7) / 400)
    with pytest.raises(ConfigurationError):
        baseline_select("afl", None, None, np.zeros(10), StrategyConfig("afl", K=1), np.random.default_rng(0))


def test_divfl_is_v_one_greedy_without_queues():
    rng = np.random.default_rng(4)
    m, s = random_matrix(rng, 12), random_state(rng, 12)
    d = baseline_select("divfl", None, m, s.counts, StrategyConfig("divfl", K=4), rng, state=s)
    assert d.subset == greedy_select(m, FairnessState.initial(12), cfg(4, 1.0)).subset


def test_round_robin_cycles():
    c = StrategyConfig("roundrobin", K=3)
    seen = [baseline_select("rr", None, None, np.zeros(6), c, None, t).subset for t in range(1, 5)]
    assert seen == [[0, 1, 2], [3, 4, 5], [0, 1, 2], [3, 4, 5]]


def test_every_strategy_is_deterministic():
    rng = np.random.default_rng(5)
    m, s = random_matrix(rng, 15), random_state(rng, 15)
    losses = rng.uniform(0, 3, 15)
    for kind in ("longfed", "divfl", "random", "powerd", "afl", "roundrobin", "divfl+fair", "random+fair"):
        sel = make_selector(StrategyConfig.parse(kind, K=4, V=0.8))
        a = sel.select(3, m, s, losses, np.random.default_rng(11))
        b = sel.select(3, m, s, losses, np.random.default_rng(11))
        assert a.subset == b.subset and a.weights == b.weights
        assert len(a.subset) == 4 and len(set(a.subset)) == 4
        assert sum(a.weights.values()) == pytest.approx(15)


# --- uniform wrapper -------------------------------------------------------

def decision(subset, n):
    return SelectionDecision(sorted(subset), {j: n / len(subset) for j in subset}, math.nan, "inner")


def test_wrapper_keeps_decision_when_counts_equal():
    out = uniform_fair_wrap(decision([1, 3], 5), np.full(5, 4), StrategyConfig("random", K=2, fair=True))
    assert out.subset == [1, 3]


def test_wrapper_displaces_always_selected_client():
    counts = np.array([9, 0, 1, 1, 1])
    out = uniform_fair_wrap(decision([0, 2], 5), counts, StrategyConfig("random", K=2, fair=True, slack=1))
    assert out.subset == [1, 2]


@pytest.mark.parametrize("kind", ["random", "powerd", "afl"])
def test_wrapper_bounds_long_run_spread(kind):
    n, K, slack = 20, 4, 1
    rng = np.random.default_rng(6)
    counts = np.zeros(n, dtype=np.int64)
    c = StrategyConfig(kind, K=K, fair=True, slack=slack)
    skew = np.linspace(0, 4, n)
    for t in range(1, 1001):
        inner = baseline_select(kind, skew, None, counts, c, rng, t)
        counts[uniform_fair_wrap(inner, counts, c).subset] += 1
        assert counts.max() - counts.min() <= slack + K


def test_wrapper_recomputes_coreset_weights():
    rng = np.random.default_rng(7)
    m, s = random_matrix(rng, 8), random_state(rng, 8)
    inner = greedy_select(m, s, cfg(3))
    counts = np.zeros(8, int)
    counts[inner.subset[0]] = 5
    out = uniform_fair_wrap(inner, counts, StrategyConfig("longfed", K=3, V=0.8, fair=True), m)
    assert inner.subset[0] not in out.subset
    assert sum(out.weights.values()) == 8
    assert out.weights == dub(m, out.subset, "unsquared")[1].weight_of()


# --- estimator surface -----------------------------------------------------

def test_selectors_are_sklearn_estimators():
    sel = LongFedSelector(subset_size=5, V=0.6)
    assert sel.get_params() == {"subset_size": 5, "V": 0.6, "objective_norm": "unsquared", "auxiliary": "phantom"}
    twin = clone(sel).set_params(V=0.9)
    assert twin.V == 0.9 and sel.V == 0.6
    wrapped = UniformFairSelector(RandomSelector(3), slack=2)
    assert clone(wrapped).get_params()["inner__subset_size"] == 3
    assert isinstance(make_selector(StrategyConfig.parse("divfl", K=2, V=1.0)), DivFLSelector)
    with pytest.raises(ConfigurationError):
        make_selector(StrategyConfig("shapley", K=2, V=1.0))


def test_strategy_label_parsing():
    c = StrategyConfig.parse("DivFL+Fair")
    assert (c.kind, c.fair, c.label) == ("divfl", True, "divfl+fair")
    assert StrategyConfig("longfed", name="lf-0.5").label == "lf-0.5"
    assert StrategyConfig.parse("random", fair=True).label == "random+fair"
