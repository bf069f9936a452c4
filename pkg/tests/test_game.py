import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_force_values
from shaqlab.game import (
    ConvergenceError,
    MarkovConvexGame,
    all_coalition_values,
    append_dummy,
    are_interchangeable,
    check_convexity,
    check_superadditivity,
    coalition_value_iteration,
    dummy_agents,
    generate_convex_game,
    glove_game,
    joint_value_iteration,
    mask_of,
    members,
    non_convex_fixture,
    single_state_game,
    subsets_without,
    swap_agents,
    symmetrize,
    validate_game,
)


@given(st.sets(st.integers(0, 15)))
def test_mask_roundtrip(agents):
    assert set(members(mask_of(agents))) == agents


def test_subsets_without_excludes_agent():
    subs = list(subsets_without(4, 2))
    assert len(subs) == 8
    assert all(not (c >> 2) & 1 for c in subs)


def test_value_iteration_matches_policy_enumeration(small_games):
    for game in small_games:
        for c in range(1, 1 << game.n_agents):
            vt = coalition_value_iteration(game, c)
            oracle = brute_force_values(game.reward(c), game.coalition_transition(c), game.gamma)
            np.testing.assert_allclose(vt.v_star, oracle, atol=1e-7)


def test_single_state_closed_form():
    game = single_state_game([[3.0, 1.0], [0.0, 2.0]], gamma=0.75)
    assert joint_value_iteration(game).v_star[0] == pytest.approx(3.0 / 0.25, abs=1e-7)


def test_empty_coalition_is_zero(small_games):
    vt = coalition_value_iteration(small_games[0], 0)
    assert np.all(vt.v_star == 0)


def test_nonconvergence_raises():
    game = single_state_game([[1.0]], gamma=0.999)
    with pytest.raises(ConvergenceError) as info:
        joint_value_iteration(game, max_iter=10)
    assert info.value.residual > 0


def test_generator_is_deterministic_and_convex():
    a = generate_convex_game(3, 2, 2, seed=5)
    b = generate_convex_game(3, 2, 2, seed=5)
    np.testing.assert_array_equal(a.transition, b.transition)
    assert check_convexity(a)
    assert validate_game(a) == []


def test_json_roundtrip(tmp_path, small_games):
    game = small_games[3]
    path = tmp_path / "g.json"
    game.save(path)
    back = MarkovConvexGame.load(path)
    np.testing.assert_array_equal(back.transition, game.transition)
    for c in range(1 << game.n_agents):
        np.testing.assert_array_equal(back.reward(c), game.reward(c))


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        MarkovConvexGame((2, 2), np.ones((1, 3, 1)), {}, 0.9)
    with pytest.raises(ValueError):
        MarkovConvexGame((2,), np.full((1, 2, 1), 1.0), {1: np.zeros((1, 3))}, 0.9)


def test_validate_flags_bad_kernel():
    game = MarkovConvexGame((1,), np.full((2, 1, 2), 0.7), {1: np.zeros((2, 1))}, 0.9)
    assert validate_game(game)


def test_non_convex_fixture_detected():
    report = check_convexity(non_convex_fixture())
    assert not report
    v = report.violation
    assert v["v_union"] + v["v_intersection"] < v["v_m"] + v["v_k"]
    assert not check_superadditivity(non_convex_fixture())


def test_glove_game_is_convex():
    assert check_convexity(glove_game())


def test_dummy_construction(small_games):
    game = small_games[4]
    d = append_dummy(game)
    assert dummy_agents(d) == [game.n_agents]
    # the dummy adds nothing to any coalition value
    vals = all_coalition_values(d)
    bit = 1 << game.n_agents
    for c in range(bit):
        np.testing.assert_allclose(vals[c | bit].v_star, vals[c].v_star, atol=1e-7)


def test_swap_is_involution(small_games):
    game = next(g for g in small_games if g.n_agents >= 2 and g.actions_per_agent[0] == g.actions_per_agent[1])
    twice = swap_agents(swap_agents(game, 0, 1), 0, 1)
    np.testing.assert_allclose(twice.transition, game.transition)
    assert are_interchangeable(symmetrize(game, 0, 1), 0, 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000))
def test_generated_games_are_supermodular(n, s, a, seed):
    assert check_convexity(generate_convex_game(n, s, a, seed))
