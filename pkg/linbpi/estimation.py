"""
Regularised least-squares estimation of (theta, mu) from generative samples
and planning in the plug-in MDP.

After t experiences (s_l, a_l, r_l, s'_l) with features Phi_t (t x d):

    theta^_t    = (Phi_t^T Phi_t + lam I)^-1 Phi_t^T R_t
    mu^_t(s)    = (Phi_t^T Phi_t + lam I)^-1 Phi_t^T S_t(s)

with S_t(s) the indicator vector of s'_l = s and lam = 1/d by default. The
plug-in transitions phi^T mu^(s') need not be probabilities; planning keeps
the linear parametrisation Q(s,a) = phi(s,a)^T xi and clips state values to
the range of the true value functions instead of projecting.
"""
import math
from collections import namedtuple

import numpy as np
import scipy.linalg

from .logging import logger
from .mdp import (PlanningSolution, flat_phi, greedy_policy, gap_of_q,
                  value_iteration_cap, is_episodic)

ZETA_2 = math.pi ** 2 / 6
PLAN_TOL = 1e-10
IMPROPER_TOL = 1e-9

EstimatedMdp = namedtuple('EstimatedMdp', 'theta mu improper t')


class LseState:
    """
    Running ridge regression state for one parameter set (one step h in
    episodic mode). gram = Phi^T Phi + lam I and its inverse are kept side
    by side; the inverse is updated by rank-one (or Woodbury) identities.
    """

    def __init__(self, features, lam=None):
        d = features.dim
        self.features = features
        self.lam = 1. / d if lam is None else float(lam)
        self.t = 0
        self.gram = self.lam * np.eye(d)
        self.gram_inv = np.eye(d) / self.lam
        self.reward_moment = np.zeros(d)
        self.transition_moment = np.zeros((d, features.n_states))

    def refactor(self):
        factor = scipy.linalg.cho_factor(self.gram, lower=True)
        self.gram_inv = scipy.linalg.cho_solve(factor,
                                               np.eye(len(self.gram)))

    def theta_hat(self):
        return self.gram_inv @ self.reward_moment

    def mu_hat(self):
        """ (S, d), row s' is mu^(s') """
        return (self.gram_inv @ self.transition_moment).T

    def design_gram(self):
        """ Phi_t^T Phi_t = t Lambda(omega_t) """
        return self.gram - self.lam * np.eye(len(self.gram))


def lse_update(state, s, a, reward, next_state):
    """ Add one experience by the Sherman-Morrison identity """
    phi = state.features.phi[s, a]
    u = state.gram_inv @ phi
    denom = 1. + phi @ u
    state.gram += np.outer(phi, phi)
    if denom > 0 and math.isfinite(denom):
        state.gram_inv -= np.outer(u, u) / denom
    else:
        logger.warning('rank-one update breakdown (denominator %g), '
                       'refactoring', denom)
        state.refactor()
    state.reward_moment += reward * phi
    state.transition_moment[:, next_state] += phi
    state.t += 1
    return state

def lse_update_batch(state, pairs, rewards, next_states):
    """
    Add a block of experiences (flattened pair indices). Uses the Woodbury
    identity for blocks smaller than d, a fresh factorization otherwise.
    """
    pairs = np.asarray(pairs, dtype=int)
    if len(pairs) == 0:
        return state
    phis = flat_phi(state.features)[pairs]
    k, d = phis.shape
    state.gram += phis.T @ phis
    if k < d:
        U = state.gram_inv @ phis.T
        inner = np.eye(k) + phis @ U
        try:
            state.gram_inv -= U @ scipy.linalg.solve(inner, U.T,
                                                     assume_a='pos')
        except (np.linalg.LinAlgError, ValueError):
            logger.warning('Woodbury update breakdown, refactoring')
            state.refactor()
    else:
        state.refactor()
    state.gram_inv = (state.gram_inv + state.gram_inv.T) / 2
    state.reward_moment += phis.T @ np.asarray(rewards, dtype=float)
    onehot = np.eye(state.features.n_states)[np.asarray(next_states,
                                                        dtype=int)]
    state.transition_moment += phis.T @ onehot
    state.t += k
    return state

def lse_from_scratch(features, pairs, rewards, next_states, lam=None):
    """ Batch ridge solve: returns (theta^, mu^) """
    d = features.dim
    lam = 1. / d if lam is None else lam
    phis = flat_phi(features)[np.asarray(pairs, dtype=int)]
    gram = phis.T @ phis + lam * np.eye(d)
    onehot = np.eye(features.n_states)[np.asarray(next_states, dtype=int)]
    theta = scipy.linalg.solve(gram, phis.T @ np.asarray(rewards, float),
                               assume_a='pos')
    mu = scipy.linalg.solve(gram, phis.T @ onehot, assume_a='pos').T
    return theta, mu


def _is_improper(features, theta, mu):
    p = flat_phi(features) @ mu.T
    return bool(p.min() < -IMPROPER_TOL or p.max() > 1 + IMPROPER_TOL or
                np.abs(p.sum(axis=1) - 1).max() > IMPROPER_TOL)

def estimate_mdp(state):
    """
    Plug-in parameters from one LseState (discounted) or a sequence of H
    LseStates (episodic, one per step).
    """
    if isinstance(state, LseState):
        theta, mu = state.theta_hat(), state.mu_hat()
        return EstimatedMdp(theta, mu,
                            _is_improper(state.features, theta, mu), state.t)
    states = list(state)
    theta = np.stack([st.theta_hat() for st in states])
    mu = np.stack([st.mu_hat() for st in states])
    improper = any(_is_improper(st.features, th, m)
                   for st, th, m in zip(states, theta, mu))
    return EstimatedMdp(theta, mu, improper, states[0].t)


def bootstrap_values(solution, vmax):
    """ State values clipped to [0, vmax], as used in the Bellman backups """
    return np.clip(solution.V, 0, vmax)

def plan_estimated_discounted(est, features, gamma, iter_cap=None,
                              tol=PLAN_TOL, V_init=None):
    """
    Iterate xi <- theta^ + gamma mu^^T V with
    V(s) = clip(max_a phi(s,a)^T xi, 0, 1/(1-gamma)).
    The plug-in kernel need not be a contraction: the returned solution
    carries converged=False when iter_cap is hit with a change above tol.
    V_init warm-starts the iteration.
    """
    S, A = features.n_states, features.n_actions
    phis = flat_phi(features)
    vmax = 1. / (1 - gamma)
    if iter_cap is None:
        iter_cap = 2 * value_iteration_cap(gamma, tol)
    V = np.zeros(S) if V_init is None else np.clip(V_init, 0, vmax)
    converged = False
    for iteration in range(1, iter_cap + 1):
        xi = est.theta + gamma * est.mu.T @ V
        V_new = np.clip((phis @ xi).reshape(S, A).max(axis=1), 0, vmax)
        change = np.abs(V_new - V).max()
        V = V_new
        if change < tol:
            converged = True
            break
    if not converged:
        logger.debug('plug-in value iteration not converged after %d '
                     'iterations (change %g)', iter_cap, change)
    xi = est.theta + gamma * est.mu.T @ V
    Q = (phis @ xi).reshape(S, A)
    policy = greedy_policy(Q)
    return PlanningSolution(Q.max(axis=1), Q, policy, gap_of_q(Q, policy),
                            converged, iteration)

def plan_estimated_episodic(est, features, horizon):
    """
    Backward induction in the plug-in MDP, state values clipped to
    [0, H-h+1] before each backup. Exact in H passes.
    """
    S, A = features.n_states, features.n_actions
    phis = flat_phi(features)
    Q = np.zeros((horizon, S, A))
    V_next = np.zeros(S)
    for h in reversed(range(horizon)):
        xi = est.theta[h] + est.mu[h].T @ V_next
        Q[h] = (phis @ xi).reshape(S, A)
        V_next = np.clip(Q[h].max(axis=1), 0, horizon - h)
    policy = greedy_policy(Q)
    return PlanningSolution(Q.max(axis=2), Q, policy, gap_of_q(Q, policy),
                            True, horizon)

def episodic_bootstrap_values(solution, horizon):
    """ (H, S) clipped values V_{h+1} fed to step h (zero after step H) """
    vmax = horizon - np.arange(horizon)
    V = np.clip(solution.V, 0, vmax[:, None])
    return np.vstack([V[1:], np.zeros((1, V.shape[1]))])


def bellman_residual_vector(mdp, est, values, h=None):
    """
    theta^ - theta + gamma (mu^ - mu)^T V (discounted), or
    theta^_h - theta_h + (mu^_h - mu_h)^T V_{h+1} at 0-based step h.
    """
    if is_episodic(mdp):
        return (est.theta[h] - mdp.theta[h] +
                (est.mu[h] - mdp.mu[h]).T @ values)
    return est.theta - mdp.theta + mdp.gamma * (est.mu - mdp.mu).T @ values

def weighted_sq_norm(v, M):
    return float(v @ M @ v)


def log_terms(t, delta, d):
    """ 2 log(sqrt(e) zeta(2) t^2 / delta) + d log(8 e^4 d t^2) """
    return (2 * math.log(math.sqrt(math.e) * ZETA_2 * t ** 2 / delta) +
            d * math.log(8 * math.e ** 4 * d * t ** 2))

def lse_concentration_bound(t, delta, d, gamma=None, horizon=None):
    """
    Right-hand side of the self-normalised least-squares bound:
    2/(1-gamma)^2 (...) discounted, 2 H^2 (...) per step episodic.
    """
    if (gamma is None) == (horizon is None):
        raise ValueError('give exactly one of gamma and horizon')
    if gamma is not None:
        return 2. / (1 - gamma) ** 2 * log_terms(t, delta, d)
    return 2. * horizon ** 2 * log_terms(t, delta, d)


def estimation_trace_row(state, mdp, h=None):
    """ (t, ||theta^ - theta||, max transition violation) diagnostics """
    est = estimate_mdp(state)
    theta = mdp.theta[h] if is_episodic(mdp) else mdp.theta
    p = flat_phi(state.features) @ est.mu.T
    violation = max(0., -p.min(), p.max() - 1,
                    np.abs(p.sum(axis=1) - 1).max())
    return state.t, float(np.linalg.norm(est.theta - theta)), float(violation)
