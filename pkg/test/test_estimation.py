import math

import numpy as np
import numpy.testing as npt
import pytest

from linbpi.mdp import (make_features, generate_instance, bundled_instance,
                        solve, flat_phi, sample_transitions, is_episodic)
from linbpi.design import g_optimal_design, draw_pairs
from linbpi.estimation import (LseState, lse_update, lse_update_batch,
                               lse_from_scratch, estimate_mdp, EstimatedMdp,
                               plan_estimated_discounted,
                               plan_estimated_episodic, bootstrap_values,
                               episodic_bootstrap_values,
                               bellman_residual_vector, weighted_sq_norm,
                               log_terms, lse_concentration_bound,
                               estimation_trace_row)
from linbpi.oracles import replay_estimates


def sampled(mdp, n, seed):
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, mdp.features.n_states * mdp.features.n_actions,
                         size=n)
    rewards, next_states = sample_transitions(mdp, pairs, rng)
    return pairs, rewards, next_states


def test_single_sample_estimate():
    features = make_features(np.eye(2)[None])
    state = LseState(features)
    assert state.lam == 0.5
    lse_update(state, 0, 0, 1., 0)
    npt.assert_allclose(state.theta_hat(), [2. / 3, 0.])
    npt.assert_allclose(state.mu_hat(), [[2. / 3, 0.]])
    npt.assert_allclose(state.design_gram(), np.diag([1., 0.]))


def test_empty_estimate_is_improper():
    features = bundled_instance('two_state').features
    est = estimate_mdp(LseState(features))
    assert est.t == 0
    npt.assert_array_equal(est.theta, 0.)
    npt.assert_array_equal(est.mu, 0.)
    assert est.improper


def test_sequential_updates_match_batch_solve():
    mdp = generate_instance(3, 4, 2, gamma=0.7,
                            rng=np.random.default_rng(0))
    pairs, rewards, next_states = sampled(mdp, 1000, 1)
    state = LseState(mdp.features)
    for i, r, s_next in zip(pairs, rewards, next_states):
        s, a = divmod(int(i), mdp.features.n_actions)
        lse_update(state, s, a, r, s_next)
    theta, mu = lse_from_scratch(mdp.features, pairs, rewards, next_states)
    npt.assert_allclose(state.theta_hat(), theta, atol=1e-8)
    npt.assert_allclose(state.mu_hat(), mu, atol=1e-8)
    assert state.t == 1000


def test_block_updates_match_sequential():
    mdp = generate_instance(4, 3, 3, gamma=0.5,
                            rng=np.random.default_rng(2))
    pairs, rewards, next_states = sampled(mdp, 300, 3)
    seq = LseState(mdp.features)
    for i, r, s_next in zip(pairs, rewards, next_states):
        lse_update(seq, *divmod(int(i), 3), r, s_next)
    blocks = LseState(mdp.features)
    # blocks smaller and larger than d
    for lo, hi in [(0, 2), (2, 3), (3, 50), (50, 53), (53, 300)]:
        lse_update_batch(blocks, pairs[lo:hi], rewards[lo:hi],
                         next_states[lo:hi])
    lse_update_batch(blocks, [], [], [])
    assert blocks.t == seq.t == 300
    npt.assert_allclose(blocks.theta_hat(), seq.theta_hat(), atol=1e-9)
    npt.assert_allclose(blocks.mu_hat(), seq.mu_hat(), atol=1e-9)
    npt.assert_allclose(blocks.gram_inv @ blocks.gram, np.eye(4), atol=1e-9)


def test_estimates_converge():
    mdp = bundled_instance('three_state')
    pairs, rewards, next_states = sampled(mdp, 50000, 4)
    state = lse_update_batch(LseState(mdp.features), pairs, rewards,
                             next_states)
    est = estimate_mdp(state)
    npt.assert_allclose(est.theta, mdp.theta, atol=0.05)
    npt.assert_allclose(est.mu, mdp.mu, atol=0.05)
    t, err, violation = estimation_trace_row(state, mdp)
    assert t == 50000
    assert err == pytest.approx(np.linalg.norm(est.theta - mdp.theta))
    assert violation < 0.1


def test_plug_in_planner_with_true_parameters():
    for name in ['two_state', 'three_state', 'four_state']:
        mdp = bundled_instance(name)
        sol = solve(mdp)
        est = EstimatedMdp(mdp.theta, mdp.mu, False, 0)
        plan = plan_estimated_discounted(est, mdp.features, mdp.gamma)
        assert plan.converged
        npt.assert_allclose(plan.V, sol.V, atol=1e-8)
        npt.assert_array_equal(plan.policy, sol.policy)
        assert plan.gap == pytest.approx(sol.gap, abs=1e-8)


def test_plug_in_planner_episodic():
    mdp = bundled_instance('episodic_two_state')
    sol = solve(mdp)
    est = EstimatedMdp(mdp.theta, mdp.mu, False, 0)
    plan = plan_estimated_episodic(est, mdp.features, mdp.horizon)
    npt.assert_allclose(plan.Q, sol.Q, atol=1e-12)
    npt.assert_array_equal(plan.policy, sol.policy)
    boot = episodic_bootstrap_values(plan, mdp.horizon)
    assert boot.shape == (mdp.horizon, mdp.features.n_states)
    npt.assert_array_equal(boot[-1], 0.)
    npt.assert_allclose(boot[:-1], sol.V[1:], atol=1e-12)


def test_zero_estimate_plans_zero_values():
    features = bundled_instance('four_state').features
    est = EstimatedMdp(np.zeros(4), np.zeros((4, 4)), True, 0)
    plan = plan_estimated_discounted(est, features, 0.6)
    assert plan.converged
    npt.assert_array_equal(plan.V, 0.)


def test_reward_perturbation_bound():
    mdp = bundled_instance('four_state')
    sol = solve(mdp)
    rng = np.random.default_rng(5)
    for i in range(20):
        theta = mdp.theta + rng.normal(scale=0.05, size=4)
        est = EstimatedMdp(theta, mdp.mu, True, 0)
        plan = plan_estimated_discounted(est, mdp.features, mdp.gamma)
        bound = np.abs(flat_phi(mdp.features) @ (theta - mdp.theta)).max() \
                / (1 - mdp.gamma)
        assert np.abs(plan.V - sol.V).max() <= bound + 1e-8


def test_values_are_clipped():
    features = bundled_instance('two_state').features
    est = EstimatedMdp(np.array([5., -1.]), np.full((2, 2), 0.5), True, 0)
    plan = plan_estimated_discounted(est, features, 0.6)
    assert np.all(bootstrap_values(plan, 2.5) <= 2.5)
    assert np.all(bootstrap_values(plan, 2.5) >= 0)


def test_bellman_residual():
    mdp = bundled_instance('two_state')
    V = solve(mdp).V
    est = EstimatedMdp(mdp.theta, mdp.mu, False, 0)
    npt.assert_allclose(bellman_residual_vector(mdp, est, V), 0.)
    est = EstimatedMdp(mdp.theta + [0.1, 0.], mdp.mu, False, 0)
    npt.assert_allclose(bellman_residual_vector(mdp, est, V), [0.1, 0.])
    assert weighted_sq_norm(np.array([1., 2.]), np.diag([3., 1.])) == 7.


def test_concentration_bound_shape():
    assert lse_concentration_bound(10, 0.1, 2, gamma=0.5) == \
        pytest.approx(8 * log_terms(10, 0.1, 2))
    assert lse_concentration_bound(10, 0.1, 2, horizon=3) == \
        pytest.approx(18 * log_terms(10, 0.1, 2))
    assert log_terms(100, 0.1, 2) > log_terms(10, 0.1, 2)
    with pytest.raises(ValueError):
        lse_concentration_bound(10, 0.1, 2)
    with pytest.raises(ValueError):
        lse_concentration_bound(10, 0.1, 2, gamma=0.5, horizon=3)


def test_residual_within_concentration_bound():
    mdp = bundled_instance('three_state')
    V = solve(mdp).V
    design = g_optimal_design(mdp.features)
    delta, t, reps = 0.1, 2000, 100
    rng = np.random.default_rng(6)
    held = 0
    for i in range(reps):
        pairs = draw_pairs(design, t, rng)
        rewards, next_states = sample_transitions(mdp, pairs, rng)
        state = lse_update_batch(LseState(mdp.features), pairs, rewards,
                                 next_states)
        resid = bellman_residual_vector(mdp, estimate_mdp(state), V)
        held += weighted_sq_norm(resid, state.gram) <= \
            lse_concentration_bound(t, delta, 3, gamma=mdp.gamma)
    assert held / reps >= 1 - delta


def uniform_hold_fraction(mdp, reps, delta, checkpoints, seed):
    """ Fraction of runs where the residual bound holds at every checkpoint """
    sol = solve(mdp)
    design = g_optimal_design(mdp.features)
    d = mdp.features.dim
    episodic = is_episodic(mdp)
    if episodic:
        H = mdp.horizon
        V_next = np.vstack([sol.V[1:], np.zeros((1, sol.V.shape[1]))])
    rng = np.random.default_rng(seed)
    held = 0
    for i in range(reps):
        ok = True
        for t, est, alloc in replay_estimates(mdp, design, checkpoints, rng):
            gram = t * alloc.lambda_t(mdp.features) + np.eye(d) / d
            if episodic:
                bound = lse_concentration_bound(t, delta / H, d, horizon=H)
                ok &= all(weighted_sq_norm(bellman_residual_vector(
                    mdp, est, V_next[h], h), gram) <= bound
                          for h in range(H))
            else:
                bound = lse_concentration_bound(t, delta, d, gamma=mdp.gamma)
                ok &= weighted_sq_norm(bellman_residual_vector(
                    mdp, est, sol.V), gram) <= bound
        held += ok
    return held / reps

@pytest.mark.slow
@pytest.mark.parametrize('name', ['three_state', 'episodic_two_state'])
def test_residual_bound_holds_uniformly(name):
    delta, reps = 0.1, 500
    fraction = uniform_hold_fraction(bundled_instance(name), reps, delta,
                                     range(50, 2001, 50), 10)
    assert fraction >= 1 - delta - 3 * math.sqrt(delta * (1 - delta) / reps)
