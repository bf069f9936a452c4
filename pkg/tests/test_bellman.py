import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shaqlab.bellman import (
    FactoredQ,
    WeightSpec,
    apply_operator,
    check_weight_spec,
    factored_norm,
    fixed_point_iterate,
    greedy_joint_policy,
    residual_optimality,
    stochastic_sbo_update,
)
from shaqlab.game import generate_convex_game, joint_value_iteration, single_state_game


def test_zero_in_zero_out():
    game = single_state_game(np.zeros((2, 2)))
    spec = WeightSpec.uniform(game)
    out = apply_operator(FactoredQ.full(game), spec, game)
    assert all(np.all(t == 0) for t in out.tables)


def test_scalar_geometric_recursion():
    game = single_state_game([1.0, 0.0], gamma=0.9)
    spec = WeightSpec.uniform(game)
    q = FactoredQ.full(game)
    seen = []
    for _ in range(3):
        q = apply_operator(q, spec, game)
        seen.append(q.tables[0][0, 0])
    np.testing.assert_allclose(seen, [1.0, 1.9, 2.71])
    assert fixed_point_iterate(spec, game).q.tables[0][0, 0] == pytest.approx(10.0, abs=1e-6)


def test_uniform_spec_passes_and_heavy_spec_fails():
    game = generate_convex_game(2, 2, 2, seed=0)
    q = FactoredQ.full(game)
    assert check_weight_spec(WeightSpec.uniform(game), game, q)
    w = [np.full((2, 2), 0.5), np.full((2, 2), 0.5)]
    w[0][1, 1] = 2.0
    res = check_weight_spec(WeightSpec(tuple(w), np.zeros((2, 2))), game, q)
    assert not res and not res.detail["contraction"]


def test_nonzero_offset_rejected():
    game = generate_convex_game(2, 1, 2, seed=0)
    spec = WeightSpec.uniform(game)
    spec = WeightSpec(spec.w, np.full((2, 1), 0.1))
    assert not check_weight_spec(spec, game, FactoredQ.full(game)).detail["offsets_cancel"]


def test_shape_mismatch_raises():
    game = generate_convex_game(2, 2, 2, seed=0)
    other = generate_convex_game(2, 3, 2, seed=0)
    with pytest.raises(ValueError):
        apply_operator(FactoredQ.full(other), WeightSpec.uniform(game), game)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.3, 1.0))
def test_contraction_bound(seed, scale):
    rng = np.random.default_rng(seed)
    game = generate_convex_game(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), seed)
    # random off-greedy weights below 1/N keep the spec valid
    spec = WeightSpec(tuple(rng.uniform(0.05, scale, size=t.shape) / game.n_agents
                            for t in FactoredQ.full(game).tables), np.zeros((game.n_agents, game.n_states)))
    factor = spec.contraction_factor(game.gamma)
    q1, q2 = FactoredQ.random(game, rng), FactoredQ.random(game, rng)
    lhs = factored_norm(apply_operator(q1, spec, game) - apply_operator(q2, spec, game))
    assert lhs <= factor * factored_norm(q1 - q2) + 1e-10


def test_single_state_analytic_fixed_point():
    payoff = np.array([[4.0, 1.0], [2.0, 3.0]])
    gamma = 0.8
    game = single_state_game(payoff, gamma=gamma)
    q = fixed_point_iterate(WeightSpec.uniform(game), game, tol=1e-10).q
    v_star = payoff.max() / (1 - gamma)
    np.testing.assert_allclose(q.tables[0][0], 0.5 * (payoff.max(axis=1) + gamma * v_star), atol=1e-8)
    np.testing.assert_allclose(q.tables[1][0], 0.5 * (payoff.max(axis=0) + gamma * v_star), atol=1e-8)


def test_fixed_point_properties(small_games):
    for game in small_games:
        spec = WeightSpec.uniform(game)
        a = fixed_point_iterate(spec, game).q
        b = fixed_point_iterate(spec, game, q0=FactoredQ.full(game, 100.0)).q
        assert (a - b).sup_norm() <= 2e-8
        oracle = joint_value_iteration(game)
        np.testing.assert_allclose(a.greedy_values(), np.tile(oracle.v_star / game.n_agents, (game.n_agents, 1)),
                                   atol=1e-5)
        assert factored_norm(residual_optimality(a, spec, game)) <= 1e-8
        # decentralized greedy actions attain the joint optimum
        joint = [game.joint_rank(a_) for a_ in greedy_joint_policy(a)]
        np.testing.assert_allclose(oracle.q_star[np.arange(game.n_states), joint], oracle.v_star, atol=1e-6)


def test_residual_trace_is_geometric():
    game = generate_convex_game(2, 3, 2, seed=4)
    spec = WeightSpec.uniform(game)
    res = fixed_point_iterate(spec, game).residuals
    res = res[res > 1e-6]  # below this, rounding dominates the ratio
    ratios = res[1:] / res[:-1]
    assert np.all(ratios <= spec.contraction_factor(game.gamma) + 1e-6)


def test_perturbed_fixed_point_residual_lower_bound():
    game = generate_convex_game(2, 2, 2, seed=8)
    spec = WeightSpec.uniform(game)
    q = fixed_point_iterate(spec, game).q
    bumped = FactoredQ((q.tables[0] + 0.5, q.tables[1]))
    delta = spec.contraction_factor(game.gamma)
    assert factored_norm(residual_optimality(bumped, spec, game)) >= (1 - delta) * 0.5 - 1e-8


def test_zero_q_residual_is_reward_push():
    game = single_state_game([[1.0, 2.0], [3.0, 4.0]])
    spec = WeightSpec.uniform(game)
    r = residual_optimality(FactoredQ.full(game), spec, game)
    np.testing.assert_allclose(r.tables[0][0], -0.5 * np.array([2.0, 4.0]))


def test_trace_csv(tmp_path):
    game = generate_convex_game(2, 2, 2, seed=1)
    result = fixed_point_iterate(WeightSpec.uniform(game), game)
    path = tmp_path / "trace.csv"
    result.write_trace(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "residual_l1", "state_0_max_residual", "state_1_max_residual"]
    assert len(rows) == len(result.trace) + 1


def test_noncontracting_spec_refused():
    game = single_state_game([1.0, 0.0], gamma=0.9)
    with pytest.raises(ValueError):
        fixed_point_iterate(WeightSpec((np.full((1, 2), 1.2),), np.zeros((1, 1))), game)


def test_stochastic_update_edge_cases():
    game = single_state_game([[1.0, 0.0], [0.0, 2.0]], gamma=0.5)
    spec = WeightSpec.uniform(game)
    rng = np.random.default_rng(0)
    q = FactoredQ.random(game, rng)
    sample = (0, (1, 1), 2.0, 0)
    same = stochastic_sbo_update(q, spec, game.gamma, sample, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(same.tables, q.tables))
    # a full step on a deterministic sample at the best response matches the operator entry
    full = stochastic_sbo_update(q, spec, game.gamma, sample, 1.0)
    op = apply_operator(q, spec, game)
    assert full.tables[0][0, 1] == pytest.approx(op.tables[0][0, 1])
    assert full.tables[1][0, 1] == pytest.approx(op.tables[1][0, 1])
    assert full.tables[0][0, 0] == q.tables[0][0, 0]
    with pytest.raises(ValueError):
        stochastic_sbo_update(q, spec, game.gamma, sample, 1.5)


def test_robbins_monro_convergence():
    # with 1/n steps the error decays like n**-(1 - gamma); gamma = 0.3 reaches 1e-3 within 1e5 updates
    game = single_state_game([1.0, 0.0], gamma=0.3)
    spec = WeightSpec.uniform(game)
    rng = np.random.default_rng(0)
    q = FactoredQ.full(game)
    visits = np.zeros(2)
    for _ in range(100_000):
        a = int(rng.integers(2))
        visits[a] += 1
        q = stochastic_sbo_update(q, spec, game.gamma, (0, (a,), game.global_reward[0, a], 0), 1.0 / visits[a])
    target = fixed_point_iterate(spec, game, tol=1e-12).q
    assert (q - target).sup_norm() < 1e-3
