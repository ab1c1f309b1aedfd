import math
import os

import numpy as np
import pytest

from linbpi import ConfigurationError, DegenerateGap
from linbpi.mdp import (PlanningSolution, make_features, make_discounted_mdp,
                        make_episodic_mdp, bundled_instance, solve)
from linbpi.design import RealizedAllocation
from linbpi.harness import make_plan, run_plan
from linbpi.gss import (make_stopping_config, u_star_discounted,
                        u_star_episodic, u_of_design_discounted,
                        u_of_design_episodic_per_step, u_star,
                        beta_threshold, episodic_threshold, threshold,
                        stopping_statistic, gss_run, gsse_run,
                        run_identification, log_bound_time,
                        predicted_stop_time, default_t_max, warmup_time,
                        kl_bernoulli, lower_bound_reference)


def low_discount_deterministic():
    mdp = bundled_instance('deterministic')
    return make_discounted_mdp(mdp.features, 0.1, mdp.theta, mdp.mu)

def one_step_episodic():
    features = bundled_instance('two_state').features
    return make_episodic_mdp(features, [[1., 0.]],
                             [[[0.5, 0.2], [0.5, 0.8]]])

def plan_with_gap(gap):
    return PlanningSolution(None, None, None, gap, True, 0)

def uniform_allocation(n_pairs, reps):
    alloc = RealizedAllocation(n_pairs)
    alloc.record_batch(np.repeat(np.arange(n_pairs), reps))
    return alloc


def test_beta_threshold():
    assert beta_threshold(1, 1, 1) == pytest.approx(19.380, abs=1e-3)
    assert beta_threshold(0.01, 10, 2) > beta_threshold(0.1, 10, 2)
    assert beta_threshold(0.1, 100, 2) > beta_threshold(0.1, 10, 2)
    with pytest.raises(ValueError):
        beta_threshold(0., 1, 1)
    with pytest.raises(ValueError):
        beta_threshold(0.1, 0, 1)


def test_episodic_threshold():
    assert episodic_threshold(0.3, 50, 2, 3) == \
        pytest.approx(3 * beta_threshold(0.1, 50, 2))
    mdp = bundled_instance('episodic_two_state')
    assert threshold(mdp, 0.3, 50) == episodic_threshold(0.3, 50, 2, 3)
    assert threshold(bundled_instance('two_state'), 0.3, 50) == \
        beta_threshold(0.3, 50, 2)


def test_characteristic_time_constants():
    assert u_star_discounted(2, 0., 1., 0.) == pytest.approx(20. / 3)
    assert u_star_episodic(1, 2, 1., 0.) == pytest.approx(80. / 3)
    assert u_star_discounted(2, 0.5, 1., 0.) == pytest.approx(16 * 20. / 3)
    assert u_star_discounted(2, 0., 0.5, 0.) == pytest.approx(4 * 20. / 3)
    assert u_star_discounted(2, 0., 0.5, 0.5) == pytest.approx(20. / 3)
    assert u_of_design_discounted(4, 0., 1., 0.) == \
        pytest.approx(2 * u_star_discounted(2, 0., 1., 0.))
    assert u_of_design_episodic_per_step([2, 2], 2, 1., 0.) == \
        pytest.approx(u_star_episodic(2, 2, 1., 0.))
    mdp = bundled_instance('two_state')
    assert u_star(mdp, 1., 0.) == u_star_discounted(2, 0.6, 1., 0.)
    with pytest.raises(DegenerateGap):
        u_star_discounted(2, 0.5, 0., 0.)


def test_stopping_config_validation():
    config = make_stopping_config(0.1, 0.05, 10, 1000)
    assert config == (0.1, 0.05, 10, 1000)
    for args in [(0.,), (1.,), (0.1, -0.1), (0.1, 0., 0), (0.1, 0., 1.5),
                 (0.1, 0., 1, 0)]:
        with pytest.raises(ConfigurationError):
            make_stopping_config(*args)


def test_stopping_statistic():
    features = bundled_instance('two_state').features
    alloc = uniform_allocation(4, 1)
    z = stopping_statistic(plan_with_gap(1.), alloc, features, 0.,
                           gamma=0.6)
    assert z == pytest.approx(4 * 3 * 0.4 ** 4 / 20)
    doubled = stopping_statistic(plan_with_gap(1.),
                                 uniform_allocation(4, 2), features, 0.,
                                 gamma=0.6)
    assert doubled == pytest.approx(2 * z)
    assert stopping_statistic(plan_with_gap(0.), alloc, features, 0.,
                              gamma=0.6) == 0.
    assert stopping_statistic(plan_with_gap(0.), alloc, features, 0.5,
                              gamma=0.6) > 0
    assert stopping_statistic(plan_with_gap(math.inf), alloc, features, 0.,
                              gamma=0.6) == math.inf
    assert stopping_statistic(plan_with_gap(1.), alloc, features, 0.,
                              horizon=2) == pytest.approx(4 * 3 / 160.)
    with pytest.raises(ValueError):
        stopping_statistic(plan_with_gap(1.), RealizedAllocation(4),
                           features, 0., gamma=0.6)
    with pytest.raises(ValueError):
        stopping_statistic(plan_with_gap(1.), alloc, features, 0.)


def test_deterministic_instance_identified():
    mdp = low_discount_deterministic()
    config = make_stopping_config(0.1, 0., check_stride=50)
    record = gss_run(mdp, config, seed=0, trace=True)
    assert not record.capped
    assert record.correct is True
    np.testing.assert_array_equal(record.returned_policy, solve(mdp).policy)
    assert record.tau % 50 == 0
    assert record.n_checks == record.tau // 50
    t, z, thr = record.z_trace[-1]
    assert t == record.tau and z > thr
    assert all(z <= thr for t, z, thr in record.z_trace[:-1])
    assert len(record.estimation_trace) == record.n_checks
    assert record.wallclock_ms >= 0


class RoundRobinRng:
    """ Draws pairs in turn and returns 0.5 for every uniform """

    def __init__(self):
        self.offset = 0

    def choice(self, n, size, p=None):
        pairs = (self.offset + np.arange(size)) % n
        self.offset = (self.offset + size) % n
        return pairs

    def random(self, size=None):
        return 0.5 if size is None else np.full(size, 0.5)

def test_round_robin_trace_values():
    # t = 2n rounds split evenly over e_1, e_2 with lam = 1/2 give
    # theta^ = (c, 0), mu^ = (c, c), c = n / (n + 1/2), plug-in gap c and
    # Z(t) = t 3 (0.9)^4 c^2 / (10 * 2)
    config = make_stopping_config(0.1, 0., check_stride=100, t_max=10000)
    record = gss_run(basis_bandit(2), config, rng=RoundRobinRng(),
                     trace=True)
    assert record.tau == 2000 and record.n_checks == 20
    assert record.correct is True
    assert [t for t, z, thr in record.z_trace] == list(range(100, 2001, 100))
    t, z, thr = record.z_trace[-1]
    assert z == pytest.approx(196.6333175242, rel=1e-9)
    assert thr == pytest.approx(194.287123, rel=1e-6)
    t, z, thr = record.z_trace[-2]
    assert z == pytest.approx(1900 * 0.098415 * (950 / 950.5) ** 2,
                              rel=1e-9)
    assert z < thr
    t, theta_error, violation = record.estimation_trace[-1]
    assert t == 2000
    assert theta_error == pytest.approx(0.5 / 1000.5, rel=1e-9)
    assert violation == pytest.approx(0.5 / 1000.5, rel=1e-9)


def test_one_step_episodic_picks_best_reward():
    mdp = one_step_episodic()
    record = gsse_run(mdp, make_stopping_config(0.1, check_stride=20),
                      seed=1)
    assert not record.capped
    assert record.correct is True
    np.testing.assert_array_equal(record.returned_policy, [[0, 0]])


def test_same_seed_same_run():
    mdp = bundled_instance('two_state_low_discount')
    config = make_stopping_config(0.1, check_stride=50)
    a = gss_run(mdp, config, seed=7)
    b = run_identification(mdp, config, seed=7)
    assert a.tau == b.tau
    np.testing.assert_array_equal(a.returned_policy, b.returned_policy)
    assert a.seed == 7


def test_smaller_delta_stops_later():
    mdp = bundled_instance('two_state_low_discount')
    taus = [gss_run(mdp, make_stopping_config(delta, check_stride=25,
                                              t_max=10 ** 6), seed=3).tau
            for delta in [0.2, 0.05, 0.001]]
    assert taus == sorted(taus)


def test_capped_run():
    mdp = bundled_instance('two_state')
    record = gss_run(mdp, make_stopping_config(0.1, check_stride=4,
                                               t_max=10), seed=0)
    assert record.capped
    assert record.correct is None
    assert record.tau == 10
    assert record.n_checks == 3


def test_mode_mismatch():
    config = make_stopping_config(0.1)
    with pytest.raises(ConfigurationError):
        gss_run(one_step_episodic(), config)
    with pytest.raises(ConfigurationError):
        gsse_run(bundled_instance('two_state'), config)


def test_log_bound_time():
    assert log_bound_time(1, 0) == pytest.approx(2 * math.log(2))
    assert log_bound_time(0, 3) == 6
    for a in [1, 5, 50, 1000]:
        for b in [0, 1, 100]:
            t = log_bound_time(a, b)
            assert t > a * math.log(t) + b


def stop_holds(t, u, delta, d, H=1):
    return t / u > 24 * H * beta_threshold(delta / H, t, d)

def test_predicted_stop_time_is_first_crossing():
    u, delta, d = 0.5, 0.1, 2
    t = 1
    while not stop_holds(t, u, delta, d):
        t += 1
    assert predicted_stop_time(u, delta, d) == t
    for u, H in [(3., None), (40., None), (2., 3)]:
        t = predicted_stop_time(u, 0.05, 3, H)
        assert stop_holds(t, u, 0.05, 3, H or 1)
        assert t == 1 or not stop_holds(t - 1, u, 0.05, 3, H or 1)


def test_predicted_stop_time_monotone():
    assert predicted_stop_time(10., 0.1, 2) < predicted_stop_time(20., 0.1, 2)
    assert predicted_stop_time(10., 0.1, 2) < \
        predicted_stop_time(10., 0.01, 2)
    assert predicted_stop_time(0., 0.1, 2) == 1
    with pytest.raises(ValueError):
        predicted_stop_time(math.inf, 0.1, 2)


def test_default_t_max():
    mdp = bundled_instance('two_state')
    u = u_star(mdp, 1., 0.)
    assert default_t_max(mdp, 1., 0., 0.1) == \
        4 * predicted_stop_time(u, 0.1, 2)


def test_lower_bound_reference():
    assert kl_bernoulli(0.3, 0.3) == 0.
    assert lower_bound_reference(1., 0.1) == \
        pytest.approx(0.8 * math.log(9))
    assert lower_bound_reference(1., 0.01) > lower_bound_reference(1., 0.1)
    assert warmup_time(2) > warmup_time(1) > 0


def failure_rate(mdp, delta, epsilon, trials, stride, seed0):
    config = make_stopping_config(delta, epsilon, check_stride=stride)
    solution = solve(mdp)
    records = [run_identification(mdp, config, seed=seed0 + i,
                                  solution=solution)
               for i in range(trials)]
    completed = [r for r in records if not r.capped]
    assert len(completed) == trials
    return sum(not r.correct for r in completed) / trials

@pytest.mark.slow
@pytest.mark.parametrize('name', ['two_state', 'three_state', 'four_state'])
def test_pac_guarantee(name):
    delta, trials = 0.1, 200
    rate = failure_rate(bundled_instance(name), delta, 0.1, trials, 200, 1000)
    assert rate <= delta + 3 * math.sqrt(delta * (1 - delta) / trials)

@pytest.mark.slow
@pytest.mark.parametrize('name', ['episodic_two_state', 'episodic_noisy',
                                  'episodic_three_state'])
def test_pac_guarantee_episodic(name):
    # every 50 rounds: a subset of the per-round check times
    delta, trials = 0.1, 200
    plan = make_plan([{'instance': name, 'deltas': [delta],
                       'epsilons': [0.1], 'trials': trials}],
                     master_seed=1000, stride=50)
    s = run_plan(plan, worker_count=os.cpu_count() or 1).summaries[0]
    assert s.errors == 0 and s.capped == 0
    assert s.failure_rate <= delta + 3 * math.sqrt(delta * (1 - delta) /
                                                   trials)


def basis_bandit(d):
    """ One state, d actions with features e_1..e_d, gap 1 """
    features = make_features(np.eye(d)[None])
    theta = np.zeros(d)
    theta[0] = 1.
    return make_discounted_mdp(features, 0.1, theta, np.ones((1, d)))

@pytest.mark.slow
def test_stopping_time_grows_with_dimension():
    config = make_stopping_config(0.1, check_stride=25)
    means = []
    for d in [2, 4, 8]:
        mdp = basis_bandit(d)
        assert solve(mdp).gap == pytest.approx(1.)
        means.append(np.mean([gss_run(mdp, config, seed=i).tau
                              for i in range(30)]))
    assert means == sorted(means)
