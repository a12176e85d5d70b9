import itertools
from fractions import Fraction
from math import comb

import numpy as np
import pytest

from qudos.attack_sim import (
    AssignmentModel,
    AttackScenario,
    ScenarioSpec,
    draw_assignment,
    estimate_success,
    evaluate_assignment,
    exact_small_gamma,
    mix64,
    run_trial,
    sweep,
    trial_seed,
    wilson_interval,
)
from qudos.topology import DnnTopology, NodePool, QuorumConfig, SlotAssignment, build_plan

from tests.oracles import partition_full_coverage_gamma

P = AssignmentModel.PARTITION
R = AssignmentModel.WITH_REPLACEMENT


def plan_for(l, q, s, n_min=None):
    quorum = QuorumConfig(s) if n_min is None else QuorumConfig.explicit(s, n_min)
    return build_plan(DnnTopology.sequential(l), range(q), quorum)


def gamma_by_bijections(plan, c):
    """Exact success probability by enumerating every node-to-slot bijection."""
    n = plan.total_slots
    corrupted = frozenset(range(c))
    wins = total = 0
    for perm in itertools.permutations(range(n)):
        total += 1
        wins += evaluate_assignment(plan, SlotAssignment(perm), corrupted).success
    return Fraction(wins, total)


def test_mix64_known_values():
    # SplitMix64 reference: first output of a stream seeded with 0 is mix64(GOLDEN).
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
    assert mix64(0) == 0


@pytest.mark.parametrize("l,q,s,c,n_min,expected", [
    (2, 2, 3, 2, 2, Fraction(2, 5)),
    (1, 0, 3, 1, None, Fraction(1)),
    (2, 1, 3, 1, 2, Fraction(1, 4)),
])
def test_exact_small_gamma_examples(l, q, s, c, n_min, expected):
    assert exact_small_gamma(plan_for(l, q, s, n_min), c) == expected


def test_exact_small_gamma_matches_bijection_enumeration():
    cases = [(l, q, s, c) for l in (1, 2, 3) for q in range(l + 1) for s in (2, 3)
             for c in range(0, 5)]
    checked = 0
    for l, q, s, c in cases:
        plan = plan_for(l, q, s)
        if plan.total_slots > 7 or c > plan.total_slots:
            continue
        assert exact_small_gamma(plan, c) == gamma_by_bijections(plan, c), (l, q, s, c)
        checked += 1
    assert checked >= 20


def test_exact_small_gamma_size_cap():
    with pytest.raises(ValueError):
        exact_small_gamma(plan_for(6, 6, 3), 1)


def test_run_trial_examples():
    plan = plan_for(10, 10, 3)
    for seed in range(50):
        out = run_trial(plan, NodePool.first_corrupted(30, 1), P, seed)
        assert not out.success and out.detected_anomaly
        clean = run_trial(plan, NodePool.first_corrupted(30, 0), P, seed)
        assert not clean.success and not clean.detected_anomaly
        full = run_trial(plan, NodePool.first_corrupted(30, 30), P, seed)
        assert full.success and full.unanimous_breaches == 10


def test_run_trial_model_mismatch():
    with pytest.raises(ValueError):
        run_trial(plan_for(3, 3, 3), NodePool(8), P, 0)


def test_success_implies_breach_or_unsecured_hit():
    plan = plan_for(5, 3, 3)
    for seed in range(300):
        out = run_trial(plan, NodePool.first_corrupted(11, 3), P, seed)
        if out.success:
            assert out.breached_quorums >= 1 or out.corrupted_unsecured_layers >= 1


def test_vectorized_path_agrees_with_per_trial_path():
    for model, nodes in ((P, None), (R, 13)):
        spec = ScenarioSpec(layer_count=4, quorum_size=3, quorum_count=2, corrupted=3,
                            node_count=nodes, model=model, iterations=500, master_seed=77)
        sc = spec.build()
        est = estimate_success(sc)
        per_trial = sum(run_trial(sc.plan, sc.pool, model, trial_seed(77, i)).success for i in range(500))
        assert est.successes == per_trial


def test_partition_assignment_is_bijection():
    plan = plan_for(4, 2, 3)
    for seed in range(20):
        assert draw_assignment(plan, NodePool(plan.total_slots), P, seed).is_bijection(plan.total_slots)


def test_with_replacement_never_rejects_nonempty_pool():
    plan = plan_for(3, 3, 3)
    for n in (1, 2, 50):
        a = draw_assignment(plan, NodePool(n), R, 5)
        assert all(0 <= v < n for v in a.nodes)
    assert set(draw_assignment(plan, NodePool(1), R, 5).nodes) == {0}


def test_with_replacement_duplicate_rate_matches_closed_form():
    # 10 quorums of 3 drawn from 30 nodes: P(some quorum repeats a node).
    plan = plan_for(10, 10, 3)
    per_quorum = 1 - Fraction(30 * 29 * 28, 30 ** 3)
    expected = float(1 - (1 - per_quorum) ** 10)
    trials = 20_000
    hits = 0
    for i in range(trials):
        nodes = draw_assignment(plan, NodePool(30), R, trial_seed(11, i)).nodes
        hits += any(len(set(nodes[k:k + 3])) < 3 for k in range(0, 30, 3))
    lo, hi = wilson_interval(hits, trials)
    half = (hi - lo) / 2
    assert abs(hits / trials - expected) <= 4 * half


def test_estimate_examples():
    q0 = estimate_success(ScenarioSpec(10, 3, quorum_count=0, corrupted=5, master_seed=3).build())
    assert q0.gamma_hat == 1.0 and q0.successes == q0.iterations
    full = estimate_success(ScenarioSpec(10, 3, corrupted=1, master_seed=3).build())
    assert full.gamma_hat == 0.0 and full.successes == 0
    assert full.detections == full.iterations


def test_zero_attackers_never_succeed():
    for model in (P, R):
        for q in (0, 2, 5):
            est = estimate_success(ScenarioSpec(5, 3, quorum_count=q, corrupted=0, model=model,
                                                iterations=2000, master_seed=q).build())
            assert est.successes == 0


def test_estimate_is_deterministic_across_workers():
    sc = ScenarioSpec(10, 11, n_min=6, corrupted=20, iterations=20_000, master_seed=99).build()
    one = estimate_success(sc, workers=1)
    assert estimate_success(sc, workers=1) == one
    assert estimate_success(sc, workers=4) == one


def test_wilson_interval_contains_estimate():
    for k, n in [(0, 10), (10, 10), (3, 10), (0, 100_000), (50_000, 100_000)]:
        lo, hi = wilson_interval(k, n)
        assert 0 <= lo <= k / n <= hi <= 1
    lo, hi = wilson_interval(0, 100_000)
    assert lo == 0 and 0 < hi < 1e-4


def test_multivariate_oracle_agrees_on_small_plan():
    # Independent of exact_small_gamma: count corrupted distributions over quorums.
    plan = plan_for(3, 3, 4)
    for c in range(13):
        assert partition_full_coverage_gamma(3, 4, c, plan.n_min) == exact_small_gamma(plan, c)


def test_fig11_first_point_against_oracle():
    exact = float(partition_full_coverage_gamma(10, 11, 20, 6))
    est = estimate_success(ScenarioSpec(10, 11, n_min=6, corrupted=20, master_seed=5).build())
    assert abs(est.gamma_hat - exact) <= 4 * est.half_width


def test_sweep_examples():
    q_sweep = sweep(ScenarioSpec(10, 3, quorum_count=0, corrupted=1, iterations=20_000, master_seed=1),
                    "q", range(11))
    gammas = [e.gamma_hat for _, e in q_sweep]
    for (_, a), (_, b) in zip(q_sweep, q_sweep[1:]):
        assert b.gamma_hat <= a.gamma_hat + 4 * max(a.half_width, b.half_width)
    assert gammas[0] == 1.0 and gammas[-1] == 0.0

    nmin_sweep = sweep(ScenarioSpec(10, 11, n_min=6, corrupted=20, iterations=20_000, master_seed=2),
                       "n_min", range(6, 12))
    vals = [e.gamma_hat for _, e in nmin_sweep]
    assert all(b <= a + 0.01 for a, b in zip(vals, vals[1:]))

    c_sweep = sweep(ScenarioSpec(4, 3, quorum_count=2, iterations=20_000, master_seed=3), "c", range(0, 9))
    vals = [e.gamma_hat for _, e in c_sweep]
    assert vals[0] == 0.0
    assert all(b >= a - 0.02 for a, b in zip(vals, vals[1:]))


def test_sweep_points_use_distinct_seeds():
    res = sweep(ScenarioSpec(3, 3, corrupted=2, iterations=100), "q", [3, 3, 3])
    seeds = {e.master_seed for _, e in res}
    assert len(seeds) == 3


def test_sweep_rejects_invalid_values():
    with pytest.raises(ValueError):
        sweep(ScenarioSpec(3, 3, corrupted=2, iterations=10), "q", [4])
    with pytest.raises(ValueError):
        sweep(ScenarioSpec(3, 3, corrupted=2, iterations=10), "t", [1])


def test_scenario_validation():
    plan = plan_for(3, 3, 3)
    with pytest.raises(ValueError):
        AttackScenario(plan, 10)
    with pytest.raises(ValueError):
        AttackScenario(plan, 1, iterations=0)
    with pytest.raises(ValueError):
        AttackScenario(plan, 1, node_count=5)
    assert AttackScenario(plan, 1, model=R, node_count=5).node_count == 5


def test_proportional_corruption_uses_floor_of_slots():
    spec = ScenarioSpec(10, 3, quorum_count=4, corrupted_fraction=Fraction(1, 10))
    assert spec.build().corrupted_count == 1  # 18 slots
    spec = ScenarioSpec(10, 3, quorum_count=5, corrupted_fraction=Fraction(1, 10))
    assert spec.build().corrupted_count == 2  # 20 slots
