"""
Best-policy identification with a generative model: the GSS (discounted)
and GSS-E (episodic) sampling-and-stopping loops.

Both sample (state, action) pairs i.i.d. from an approximate G-optimal
design computed once before learning, maintain ridge estimates of the MDP
parameters and stop as soon as

    Z(t) = t U(M^_t, omega_t)^-1  >  beta(delta, t)         (discounted)
    Z(t)                          >  H beta(delta/H, t)     (episodic)

where U(M, omega) = 10 sigma(omega) / (3 (1-gamma)^4 (Delta(M) + eps)^2)
(10 H^3 sigma(omega) / (3 (Delta + eps)^2) episodic) and
beta(delta, t) = 12/5 (2 log(sqrt(e) zeta(2) t^2 / delta)
                       + d log(8 e^4 d t^2)).
The returned policy is greedy in the plug-in MDP at the stopping round.
"""
import math
import time
from collections import namedtuple

import numpy as np
import scipy.special

from ._linbpi import ConfigurationError, DegenerateGap, SingularDesign
from .logging import logger
from .mdp import (is_episodic, solve, is_epsilon_optimal, sample_transitions)
from .design import (g_optimal_design, draw_pairs, RealizedAllocation,
                     DEFAULT_EPS_G)
from .estimation import (LseState, lse_update_batch, estimate_mdp,
                         plan_estimated_discounted, plan_estimated_episodic,
                         estimation_trace_row, log_terms, ZETA_2)

DEFAULT_STRIDE = 1
T_MAX_FACTOR = 4
CORRECTNESS_TOL = 1e-9

StoppingConfig = namedtuple('StoppingConfig',
                            'delta epsilon check_stride t_max')
TrialRecord = namedtuple('TrialRecord',
                         'tau returned_policy correct capped z_trace seed '
                         'wallclock_ms n_checks planner_failures '
                         'estimation_trace')


def make_stopping_config(delta, epsilon=0., check_stride=DEFAULT_STRIDE,
                         t_max=None):
    if not 0 < delta < 1:
        raise ConfigurationError('delta must lie in (0,1), got %r' % delta)
    if epsilon < 0:
        raise ConfigurationError('epsilon must be >= 0, got %r' % epsilon)
    if int(check_stride) != check_stride or check_stride < 1:
        raise ConfigurationError('check stride must be an integer >= 1, '
                                 'got %r' % check_stride)
    if t_max is not None and t_max < 1:
        raise ConfigurationError('t_max must be >= 1, got %r' % t_max)
    return StoppingConfig(float(delta), float(epsilon), int(check_stride),
                          None if t_max is None else int(t_max))


def _gap_term(gap, epsilon):
    if gap + epsilon == 0:
        raise DegenerateGap('gap + epsilon = 0')
    return (gap + epsilon) ** 2

def u_star_discounted(d, gamma, gap, epsilon):
    """ U*(M) = 10 d / (3 (1-gamma)^4 (Delta + eps)^2) """
    return u_of_design_discounted(d, gamma, gap, epsilon)

def u_of_design_discounted(sigma_omega, gamma, gap, epsilon):
    """ U(M, omega) = 10 sigma(omega) / (3 (1-gamma)^4 (Delta + eps)^2) """
    return 10. * sigma_omega / (3 * (1 - gamma) ** 4 *
                                _gap_term(gap, epsilon))

def u_star_episodic(d, horizon, gap, epsilon):
    """ 10 H^3 d / (3 (Delta + eps)^2) """
    return u_of_design_episodic(d, horizon, gap, epsilon)

def u_of_design_episodic(sigma_omega, horizon, gap, epsilon):
    """ 10 H^3 sigma(omega) / (3 (Delta + eps)^2), same design every step """
    return 10. * horizon ** 3 * sigma_omega / (3 * _gap_term(gap, epsilon))

def u_of_design_episodic_per_step(sigmas, horizon, gap, epsilon):
    """ 10 H^2 sum_h sigma(omega_h) / (3 (Delta + eps)^2) """
    return 10. * horizon ** 2 * float(np.sum(sigmas)) / \
           (3 * _gap_term(gap, epsilon))

def u_star(mdp, gap, epsilon):
    d = mdp.features.dim
    if is_episodic(mdp):
        return u_star_episodic(d, mdp.horizon, gap, epsilon)
    return u_star_discounted(d, mdp.gamma, gap, epsilon)


def beta_threshold(delta, t, d):
    """ beta(delta, t) = 12/5 (2 log(sqrt(e) zeta(2) t^2/delta) + d log(8 e^4 d t^2)) """
    if not 0 < delta <= 1:
        raise ValueError('delta must lie in (0,1], got %g' % delta)
    if t < 1:
        raise ValueError('t must be >= 1, got %g' % t)
    return 12. / 5 * log_terms(t, delta, d)

def episodic_threshold(delta, t, d, horizon):
    """ H beta(delta/H, t) """
    return horizon * beta_threshold(delta / horizon, t, d)

def threshold(mdp, delta, t):
    d = mdp.features.dim
    if is_episodic(mdp):
        return episodic_threshold(delta, t, d, mdp.horizon)
    return beta_threshold(delta, t, d)


def stopping_statistic(est_solution, alloc, features, epsilon, gamma=None,
                       horizon=None):
    """
    Z(t) = t U(M^_t, omega_t)^-1 with the plug-in gap and sigma(omega_t).
    A zero plug-in gap with epsilon = 0 gives Z = 0. Raises SingularDesign
    while Lambda(omega_t) is singular.
    """
    if (gamma is None) == (horizon is None):
        raise ValueError('give exactly one of gamma and horizon')
    if alloc.t < 1:
        raise ValueError('no sample recorded yet')
    sigma_t = alloc.sigma_t(features)
    gap = est_solution.gap
    if math.isinf(gap):
        return math.inf
    if gap + epsilon <= 0:
        return 0.
    if gamma is not None:
        u_inv = 1. / u_of_design_discounted(sigma_t, gamma, gap, epsilon)
    else:
        u_inv = 1. / u_of_design_episodic(sigma_t, horizon, gap, epsilon)
    return alloc.t * u_inv


def _plan(mdp, est, previous):
    features = mdp.features
    if is_episodic(mdp):
        return plan_estimated_episodic(est, features, mdp.horizon)
    V_init = None if previous is None else previous.V
    return plan_estimated_discounted(est, features, mdp.gamma,
                                     V_init=V_init)

def _identify(mdp, config, eps_g, rng, seed, design, solution, trace):
    features = mdp.features
    d = features.dim
    episodic = is_episodic(mdp)
    if solution is None:
        solution = solve(mdp)
    if design is None:
        design = g_optimal_design(features, eps_g)
    t_max = config.t_max
    if t_max is None:
        t_max = default_t_max(mdp, solution.gap, config.epsilon,
                              config.delta)
    n_steps = mdp.horizon if episodic else 1
    states = [LseState(features) for h in range(n_steps)]
    alloc = RealizedAllocation(features.n_states * features.n_actions)
    z_trace = [] if trace else None
    est_trace = [] if trace else None
    n_checks = planner_failures = 0
    plan = None
    stopped = False
    start = time.perf_counter()
    logger.info('%s run: d=%d, delta=%g, epsilon=%g, stride=%d, t_max=%d',
                'GSS-E' if episodic else 'GSS', d, config.delta,
                config.epsilon, config.check_stride, t_max)
    while alloc.t < t_max and not stopped:
        k = min(config.check_stride, t_max - alloc.t)
        pairs = draw_pairs(design, k, rng)
        for h, state in enumerate(states):
            rewards, next_states = sample_transitions(
                mdp, pairs, rng, h if episodic else None)
            lse_update_batch(state, pairs, rewards, next_states)
        alloc.record_batch(pairs)
        t = alloc.t

        est = estimate_mdp(states if episodic else states[0])
        plan = _plan(mdp, est, plan)
        n_checks += 1
        if trace:
            est_trace.append(estimation_trace_row(
                states[0], mdp, 0 if episodic else None))
        if not plan.converged:
            planner_failures += 1
            logger.warning('t=%d: plug-in planner did not converge, '
                           'skipping stopping check', t)
            continue
        try:
            if episodic:
                z = stopping_statistic(plan, alloc, features, config.epsilon,
                                       horizon=mdp.horizon)
            else:
                z = stopping_statistic(plan, alloc, features, config.epsilon,
                                       gamma=mdp.gamma)
        except SingularDesign:
            continue
        thr = threshold(mdp, config.delta, t)
        logger.debug2('t=%d Z=%g threshold=%g gap^=%g', t, z, thr, plan.gap)
        if trace:
            z_trace.append((t, z, thr))
        stopped = z > thr

    if plan is None:
        plan = _plan(mdp, estimate_mdp(states if episodic else states[0]),
                     None)
    capped = not stopped
    if capped:
        logger.warning('run capped at t_max=%d without stopping', t_max)
        correct = None
    else:
        correct = is_epsilon_optimal(mdp, plan.policy, config.epsilon,
                                     tol=CORRECTNESS_TOL, solution=solution)
    wallclock_ms = (time.perf_counter() - start) * 1000
    logger.info('stopped at tau=%d (capped=%s, correct=%s)', alloc.t,
                capped, correct)
    return TrialRecord(alloc.t, np.array(plan.policy), correct, capped,
                       z_trace, seed, wallclock_ms, n_checks,
                       planner_failures, est_trace)


def gss_run(mdp, config, eps_g=DEFAULT_EPS_G, rng=None, seed=None,
            design=None, solution=None, trace=False):
    """
    GSS on a discounted linear MDP. rng defaults to default_rng(seed);
    design and solution can be passed in to share them across trials.
    """
    if is_episodic(mdp):
        raise ConfigurationError('GSS needs a discounted MDP, use gsse_run')
    if rng is None:
        rng = np.random.default_rng(seed)
    return _identify(mdp, config, eps_g, rng, seed, design, solution, trace)

def gsse_run(mdp, config, eps_g=DEFAULT_EPS_G, rng=None, seed=None,
             design=None, solution=None, trace=False):
    """
    GSS-E on an episodic linear MDP: each round one pair is drawn from the
    design and queried at every step h, feeding H parallel estimators.
    """
    if not is_episodic(mdp):
        raise ConfigurationError('GSS-E needs an episodic MDP, use gss_run')
    if rng is None:
        rng = np.random.default_rng(seed)
    return _identify(mdp, config, eps_g, rng, seed, design, solution, trace)

def run_identification(mdp, config, **kwargs):
    if is_episodic(mdp):
        return gsse_run(mdp, config, **kwargs)
    return gss_run(mdp, config, **kwargs)


def log_bound_time(a, b):
    """ For a >= 1, t >= 2a log(2a) + 2b is sufficient for t > a log(t) + b """
    if a <= 0:
        return 2. * b
    return 2. * a * math.log(2 * a) + 2. * b

def predicted_stop_time(u_star, delta, d, horizon=None):
    """
    Smallest integer t with t / U* > 24 beta(delta, t) (24 H beta(delta/H, t)
    episodic). Bracketed with the logarithm bound, then refined by
    bisection on the increasing branch of t - 24 U* beta.
    """
    if not math.isfinite(u_star):
        raise ValueError('u_star must be finite')
    if u_star <= 0:
        return 1
    H = 1 if horizon is None else horizon
    delta_h = delta / H

    def holds(t):
        return t / u_star > 24 * H * beta_threshold(delta_h, t, d)

    # 24 H U* beta(delta_h, t) = a log(t) + b
    scale = 24 * H * u_star * 12. / 5
    a = scale * (4 + 2 * d)
    b = scale * (2 * math.log(math.sqrt(math.e) * ZETA_2 / delta_h) +
                 d * math.log(8 * math.e ** 4 * d))
    hi = int(math.ceil(log_bound_time(a, b))) + 1
    lo = max(1, int(math.floor(a)))
    while not holds(hi):
        hi *= 2
    if holds(lo):
        # t - a log t - b decreases below a
        while lo > 1 and holds(lo - 1):
            lo -= 1
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi

def default_t_max(mdp, gap, epsilon, delta, factor=T_MAX_FACTOR):
    """ factor x predicted_stop_time(U*(M)) """
    horizon = mdp.horizon if is_episodic(mdp) else None
    u = u_star(mdp, gap, epsilon)
    return int(factor * predicted_stop_time(u, delta, mdp.features.dim,
                                            horizon))

def warmup_time(d):
    """
    T1 = (56d/3) log(6272 zeta(2) d^3 / 3): beyond it the design
    concentration event holds with probability >= 1 - 2/(zeta(2) t^2).
    """
    return 56. * d / 3 * math.log(6272 * ZETA_2 * d ** 3 / 3)


def kl_bernoulli(a, b):
    """ kl(a, b) between Bernoulli laws, natural logarithm """
    return float(scipy.special.rel_entr(a, b) +
                 scipy.special.rel_entr(1 - a, 1 - b))

def lower_bound_reference(u_star_value, delta):
    """ U*(M) kl(delta, 1-delta): reference scale of the lower bound """
    return u_star_value * kl_bernoulli(delta, 1 - delta)
