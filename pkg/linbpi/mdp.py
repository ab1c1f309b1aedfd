"""
Ground-truth linear MDPs: representation, validation, exact planning and
the generative model.

A linear MDP over finite state and action sets is given by a known feature
table phi[s, a] in R^d and parameters such that

    p(s, a, s') = phi(s, a)^T mu(s')      r(s, a) = phi(s, a)^T theta

In the discounted setting (gamma, theta, mu) are fixed; in the episodic
setting there is one (theta_h, mu_h) per step h = 1..H. Rewards are
Bernoulli(r(s, a)).

Array conventions:
  - phi: (S, A, d); pairs are flattened as index s * A + a
  - discounted theta: (d,), mu: (S, d)
  - episodic theta: (H, d), mu: (H, S, d); step h is stored at index h-1
  - policies are integer arrays, (S,) discounted or (H, S) episodic
  - value tables are (S,) / (H, S), action-value tables (S, A) / (H, S, A)

All instance containers are namedtuples holding read-only arrays.
"""
import json
import math
import os.path as op
from collections import namedtuple

import numpy as np
import scipy.linalg

from ._linbpi import (InstanceError, ConvergenceError,
                      ResampleBudgetExceeded, data_path)
from .logging import logger

DEFAULT_TOL = 1e-10
VALIDATION_TOL = 1e-10
REWARD_NOISES = ['bernoulli']
MODE_DISCOUNTED = 'discounted'
MODE_EPISODIC = 'episodic'
GENERATOR_BUDGET = 10000

FeatureMap = namedtuple('FeatureMap', 'n_states n_actions dim phi')
DiscountedLinearMdp = namedtuple('DiscountedLinearMdp',
                                 'features gamma theta mu reward_noise')
EpisodicLinearMdp = namedtuple('EpisodicLinearMdp',
                               'features horizon theta mu reward_noise')
PlanningSolution = namedtuple('PlanningSolution',
                              'V Q policy gap converged iterations')


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def pair_index(features, s, a):
    return s * features.n_actions + a

def pair_of_index(features, i):
    return divmod(int(i), features.n_actions)

def flat_phi(features):
    """ (S*A, d) view of the feature table """
    return features.phi.reshape(-1, features.dim)


def is_episodic(mdp):
    return isinstance(mdp, EpisodicLinearMdp)

def mode_of(mdp):
    return MODE_EPISODIC if is_episodic(mdp) else MODE_DISCOUNTED

def gamma_or_horizon(mdp):
    return mdp.horizon if is_episodic(mdp) else mdp.gamma


def make_features(phi, tol=1e-12):
    """
    Build a FeatureMap from a (S, A, d) table.
    Each feature must have norm <= 1 and the features must span R^d.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 3:
        raise InstanceError('phi must be a S x A x d table, got shape %s' %
                            (phi.shape,))
    n_states, n_actions, dim = phi.shape
    if min(n_states, n_actions, dim) < 1:
        raise InstanceError('empty feature table, shape %s' % (phi.shape,))
    norms = np.linalg.norm(phi, axis=2)
    if norms.max() > 1 + tol:
        s, a = np.unravel_index(np.argmax(norms), norms.shape)
        raise InstanceError('||phi(s=%d,a=%d)|| = %g > 1 '
                            '(bound: ||phi(s,a)|| <= 1)' % (s, a, norms[s, a]))
    rank = np.linalg.matrix_rank(phi.reshape(-1, dim))
    if rank < dim:
        raise InstanceError('features span a space of rank %d < d=%d '
                            '(bound: span(phi) = R^d)' % (rank, dim))
    return FeatureMap(n_states, n_actions, dim, _frozen(phi))


def _check_step_parameters(features, theta, mu, step_label, tol):
    d = features.dim
    if theta.shape != (d,):
        raise InstanceError('theta%s must have shape (%d,), got %s' %
                            (step_label, d, theta.shape))
    if mu.shape != (features.n_states, d):
        raise InstanceError('mu%s must have shape (%d, %d), got %s' %
                            (step_label, features.n_states, d, mu.shape))
    sqrt_d = math.sqrt(d)
    if np.linalg.norm(theta) > sqrt_d + tol:
        raise InstanceError('||theta%s|| = %g > sqrt(d) = %g '
                            '(bound: ||theta|| <= sqrt(d))' %
                            (step_label, np.linalg.norm(theta), sqrt_d))
    mu_mass = np.linalg.norm(np.abs(mu).sum(axis=0))
    if mu_mass > sqrt_d + tol:
        raise InstanceError('||sum_s |mu%s(s)||| = %g > sqrt(d) = %g '
                            '(bound: ||sum_s |mu(s)||| <= sqrt(d))' %
                            (step_label, mu_mass, sqrt_d))
    phis = flat_phi(features)
    p = phis @ mu.T
    if p.min() < -tol or p.max() > 1 + tol:
        i, sn = np.unravel_index(np.argmax(np.maximum(-p, p - 1)), p.shape)
        s, a = pair_of_index(features, i)
        raise InstanceError('p%s(s=%d,a=%d,s\'=%d) = %g outside [0,1] '
                            '(bound: 0 <= phi^T mu(s\') <= 1)' %
                            (step_label, s, a, sn, p[i, sn]))
    row_sums = p.sum(axis=1)
    if np.abs(row_sums - 1).max() > tol:
        i = np.argmax(np.abs(row_sums - 1))
        s, a = pair_of_index(features, i)
        raise InstanceError('sum_s\' p%s(s=%d,a=%d,s\') = %.12g != 1 '
                            '(bound: transition rows sum to 1)' %
                            (step_label, s, a, row_sums[i]))
    r = phis @ theta
    if r.min() < -tol or r.max() > 1 + tol:
        i = np.argmax(np.maximum(-r, r - 1))
        s, a = pair_of_index(features, i)
        raise InstanceError('r%s(s=%d,a=%d) = %g outside [0,1] '
                            '(bound: 0 <= phi^T theta <= 1)' %
                            (step_label, s, a, r[i]))


def _check_noise(reward_noise):
    if reward_noise not in REWARD_NOISES:
        raise InstanceError('unknown reward noise %r, expected one of %s' %
                            (reward_noise, REWARD_NOISES))

def make_discounted_mdp(features, gamma, theta, mu, reward_noise='bernoulli',
                        tol=VALIDATION_TOL):
    """ Validated discounted linear MDP """
    if not 0 < gamma < 1:
        raise InstanceError('gamma = %g outside (0,1)' % gamma)
    _check_noise(reward_noise)
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    _check_step_parameters(features, theta, mu, '', tol)
    return DiscountedLinearMdp(features, float(gamma), _frozen(theta),
                               _frozen(mu), reward_noise)

def make_episodic_mdp(features, theta, mu, reward_noise='bernoulli',
                      tol=VALIDATION_TOL):
    """ Validated episodic linear MDP, theta (H, d) and mu (H, S, d) """
    _check_noise(reward_noise)
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if theta.ndim != 2 or theta.shape[0] < 1:
        raise InstanceError('episodic theta must be H x d with H >= 1, '
                            'got shape %s' % (theta.shape,))
    horizon = theta.shape[0]
    if mu.ndim != 3 or mu.shape[0] != horizon:
        raise InstanceError('episodic mu must be H x S x d with H=%d, '
                            'got shape %s' % (horizon, mu.shape))
    for h in range(horizon):
        _check_step_parameters(features, theta[h], mu[h], '_%d' % (h + 1),
                               tol)
    return EpisodicLinearMdp(features, horizon, _frozen(theta), _frozen(mu),
                             reward_noise)


def transition_matrix(mdp, h=None):
    """ (S*A, S) kernel phi mu^T; h is a 0-based step for episodic MDPs """
    mu = mdp.mu[h] if is_episodic(mdp) else mdp.mu
    return flat_phi(mdp.features) @ mu.T

def mean_rewards(mdp, h=None):
    """ (S*A,) mean rewards phi theta """
    theta = mdp.theta[h] if is_episodic(mdp) else mdp.theta
    return flat_phi(mdp.features) @ theta


def greedy_policy(Q):
    """ Greedy actions, ties broken by smallest action index """
    return np.argmax(Q, axis=-1)

def gap_of_q(Q, policy):
    """
    min over states (and steps) of V(s) - Q(s, a) for a != policy(s), with
    V(s) = max_a Q(s, a). Infinite when there is a single action.
    """
    if Q.shape[-1] < 2:
        return math.inf
    V = Q.max(axis=-1, keepdims=True)
    gaps = V - Q
    mask = np.zeros(Q.shape, dtype=bool)
    np.put_along_axis(mask, policy[..., None], True, axis=-1)
    return float(np.where(mask, np.inf, gaps).min())


def value_iteration_cap(gamma, tol):
    return int(math.ceil(math.log((1. / (1 - gamma)) / tol) /
                         math.log(1. / gamma))) + 1

def solve_discounted(mdp, tol=DEFAULT_TOL):
    """
    Value iteration on the true MDP. The returned V is within tol of the
    fixed point in sup-norm.
    """
    if tol <= 0:
        raise ValueError('tol must be positive, got %g' % tol)
    S, A = mdp.features.n_states, mdp.features.n_actions
    gamma = mdp.gamma
    P = transition_matrix(mdp)
    r = mean_rewards(mdp)
    cap = value_iteration_cap(gamma, tol)
    # ||V_k - V*|| <= gamma/(1-gamma) ||V_k - V_{k-1}||
    stop = tol * (1 - gamma) / gamma
    V = np.zeros(S)
    converged = False
    for iteration in range(1, cap + 1):
        V_new = (r + gamma * P @ V).reshape(S, A).max(axis=1)
        change = np.abs(V_new - V).max()
        V = V_new
        logger.debug3('value iteration %d: change %g', iteration, change)
        if change <= stop:
            converged = True
            break
    if not converged:
        raise ConvergenceError('value iteration did not reach tol=%g in %d '
                               'iterations' % (tol, cap), achieved=change)
    Q = (r + gamma * P @ V).reshape(S, A)
    policy = greedy_policy(Q)
    return PlanningSolution(_frozen(Q.max(axis=1)), _frozen(Q),
                            _frozen(policy, int), gap_of_q(Q, policy),
                            True, iteration)

def solve_episodic(mdp):
    """ Exact backward induction with V_{H+1} = 0 """
    S, A = mdp.features.n_states, mdp.features.n_actions
    H = mdp.horizon
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in reversed(range(H)):
        Q[h] = (mean_rewards(mdp, h) +
                transition_matrix(mdp, h) @ V[h + 1]).reshape(S, A)
        V[h] = Q[h].max(axis=1)
    policy = greedy_policy(Q)
    return PlanningSolution(_frozen(V[:H]), _frozen(Q), _frozen(policy, int),
                            gap_of_q(Q, policy), True, H)

def solve(mdp, tol=DEFAULT_TOL):
    if is_episodic(mdp):
        return solve_episodic(mdp)
    return solve_discounted(mdp, tol=tol)


def _check_policy(mdp, policy):
    policy = np.asarray(policy)
    S, A = mdp.features.n_states, mdp.features.n_actions
    shape = (mdp.horizon, S) if is_episodic(mdp) else (S,)
    if policy.shape != shape:
        raise ValueError('policy must have shape %s, got %s' %
                         (shape, policy.shape))
    if policy.min() < 0 or policy.max() >= A:
        raise ValueError('policy actions must lie in [0, %d)' % A)
    return policy.astype(int)

def _policy_rows(features, policy):
    return np.arange(features.n_states) * features.n_actions + policy

def evaluate_policy(mdp, policy):
    """
    V^pi: direct linear solve of (I - gamma P_pi) V = r_pi (discounted) or a
    backward pass (episodic).
    """
    policy = _check_policy(mdp, policy)
    features = mdp.features
    S = features.n_states
    if is_episodic(mdp):
        V = np.zeros((mdp.horizon + 1, S))
        for h in reversed(range(mdp.horizon)):
            rows = _policy_rows(features, policy[h])
            V[h] = mean_rewards(mdp, h)[rows] + \
                   transition_matrix(mdp, h)[rows] @ V[h + 1]
        return V[:mdp.horizon]
    rows = _policy_rows(features, policy)
    P_pi = transition_matrix(mdp)[rows]
    r_pi = mean_rewards(mdp)[rows]
    return scipy.linalg.solve(np.eye(S) - mdp.gamma * P_pi, r_pi)

def q_of_values(mdp, V):
    """ One Bellman backup: Q(s,a) = r(s,a) + gamma p(s,a)^T V """
    S, A = mdp.features.n_states, mdp.features.n_actions
    if is_episodic(mdp):
        H = mdp.horizon
        V_next = np.vstack([V[1:], np.zeros((1, S))])
        return np.stack([(mean_rewards(mdp, h) +
                          transition_matrix(mdp, h) @ V_next[h]).reshape(S, A)
                         for h in range(H)])
    return (mean_rewards(mdp) +
            mdp.gamma * transition_matrix(mdp) @ V).reshape(S, A)

def policy_q(mdp, policy):
    """ Q^pi for a deterministic policy """
    return q_of_values(mdp, evaluate_policy(mdp, policy))


def is_epsilon_optimal(mdp, policy, epsilon, tol=1e-9, solution=None):
    """
    pi in Pi*_eps(M): V* - V^pi <= eps at every state (first step only for
    episodic MDPs).
    """
    if solution is None:
        solution = solve(mdp)
    V_pi = evaluate_policy(mdp, policy)
    if is_episodic(mdp):
        return bool((solution.V[0] - V_pi[0]).max() <= epsilon + tol)
    return bool((solution.V - V_pi).max() <= epsilon + tol)


def _random_simplex_features(d, n_states, n_actions, rng):
    n_pairs = n_states * n_actions
    if d > n_pairs:
        raise InstanceError('d=%d exceeds the number of pairs S*A=%d' %
                            (d, n_pairs))
    phi = rng.dirichlet(np.ones(d), size=n_pairs)
    anchors = rng.choice(n_pairs, size=d, replace=False)
    phi[anchors] = np.eye(d)
    return make_features(phi.reshape(n_states, n_actions, d))

def _random_step(d, n_states, rng):
    theta = rng.random(d)
    mu = rng.dirichlet(np.ones(n_states), size=d).T
    return theta, mu

def generate_instance(d, n_states, n_actions, gamma=None, horizon=None,
                      min_gap=0., rng=None, budget=GENERATOR_BUDGET):
    """
    Random valid linear MDP by the simplex construction: features in the
    probability simplex of R^d (d anchor pairs get e_1..e_d), columns of mu
    are distributions over states, theta in [0,1]^d. Resamples until the
    gap is at least min_gap. Exactly one of gamma / horizon must be given.
    """
    if (gamma is None) == (horizon is None):
        raise ValueError('give exactly one of gamma and horizon')
    if min_gap < 0:
        raise ValueError('min_gap must be >= 0, got %g' % min_gap)
    if rng is None:
        rng = np.random.default_rng()
    for attempt in range(1, budget + 1):
        features = _random_simplex_features(d, n_states, n_actions, rng)
        if gamma is not None:
            theta, mu = _random_step(d, n_states, rng)
            mdp = make_discounted_mdp(features, gamma, theta, mu)
        else:
            steps = [_random_step(d, n_states, rng) for h in range(horizon)]
            mdp = make_episodic_mdp(features, [t for t, m in steps],
                                    [m for t, m in steps])
        gap = solve(mdp).gap
        if gap >= min_gap:
            logger.debug('instance generated after %d attempt(s), gap %g',
                         attempt, gap)
            return mdp
    raise ResampleBudgetExceeded('no instance with gap >= %g after %d '
                                 'attempts' % (min_gap, budget))


def _draw_next_state(p_row, u):
    cdf = np.cumsum(np.clip(p_row, 0, None))
    return min(int(np.searchsorted(cdf, u * cdf[-1], side='right')),
               len(p_row) - 1)

def sample_transition(mdp, s, a, rng, h=None):
    """
    Generative model: one (reward, next state) draw for the pair (s, a) at
    0-based step h (episodic only).
    """
    features = mdp.features
    if not (0 <= s < features.n_states and 0 <= a < features.n_actions):
        raise ValueError('invalid pair (%d, %d)' % (s, a))
    phi = features.phi[s, a]
    theta = mdp.theta[h] if is_episodic(mdp) else mdp.theta
    mu = mdp.mu[h] if is_episodic(mdp) else mdp.mu
    reward = float(rng.random() < phi @ theta)
    next_state = _draw_next_state(mu @ phi, rng.random())
    return reward, next_state

def sample_transitions(mdp, pairs, rng, h=None):
    """ Vectorised generative model draws for flattened pair indices """
    pairs = np.asarray(pairs, dtype=int)
    r = mean_rewards(mdp, h)[pairs]
    P = transition_matrix(mdp, h)[pairs]
    rewards = (rng.random(len(pairs)) < r).astype(float)
    cdf = np.cumsum(np.clip(P, 0, None), axis=1)
    u = rng.random(len(pairs))[:, None] * cdf[:, -1:]
    next_states = np.minimum((cdf <= u).sum(axis=1), P.shape[1] - 1)
    return rewards, next_states


def instance_to_dict(mdp):
    features = mdp.features
    data = {'d': features.dim, 'S': features.n_states,
            'A': features.n_actions, 'mode': mode_of(mdp),
            'phi': features.phi.tolist(), 'theta': mdp.theta.tolist(),
            'mu': mdp.mu.tolist(), 'reward_noise': mdp.reward_noise}
    if is_episodic(mdp):
        data['H'] = mdp.horizon
    else:
        data['gamma'] = mdp.gamma
    return data

def instance_from_dict(data):
    """ Parse and re-validate an instance dict (see load_instance) """
    try:
        mode = data.get('mode', MODE_DISCOUNTED)
        phi = np.asarray(data['phi'], dtype=float)
        d, S, A = int(data['d']), int(data['S']), int(data['A'])
        theta, mu = data['theta'], data['mu']
    except KeyError as e:
        raise InstanceError('instance is missing field %s' % e)
    if phi.shape != (S, A, d):
        raise InstanceError('phi has shape %s, expected (S, A, d) = %s' %
                            (phi.shape, (S, A, d)))
    features = make_features(phi)
    noise = data.get('reward_noise', 'bernoulli')
    if mode == MODE_DISCOUNTED:
        if 'gamma' not in data:
            raise InstanceError('discounted instance is missing field gamma')
        return make_discounted_mdp(features, float(data['gamma']), theta, mu,
                                   noise)
    elif mode == MODE_EPISODIC:
        if 'H' not in data:
            raise InstanceError('episodic instance is missing field H')
        mdp = make_episodic_mdp(features, theta, mu, noise)
        if mdp.horizon != int(data['H']):
            raise InstanceError('H=%s does not match %d parameter steps' %
                                (data['H'], mdp.horizon))
        return mdp
    raise InstanceError('unknown mode %r' % mode)

def load_instance(source):
    """
    Load an instance from a dict, a JSON file path or the name of a bundled
    instance (linbpi/data/<name>.json).
    """
    if isinstance(source, dict):
        return instance_from_dict(source)
    source = str(source)
    if op.exists(source):
        with open(source) as fin:
            return instance_from_dict(json.load(fin))
    return bundled_instance(source)

def bundled_instance(name):
    res = data_path(name if name.endswith('.json') else name + '.json')
    if not res.is_file():
        raise InstanceError('no instance file or bundled instance named %r' %
                            name)
    return instance_from_dict(json.loads(res.read_text()))

def save_instance(mdp, fn):
    with open(fn, 'w') as fout:
        json.dump(instance_to_dict(mdp), fout, indent=1)
