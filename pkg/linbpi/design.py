"""
Experimental designs over (state, action) pairs.

A design is a probability vector omega over the S*A flattened pairs. Its
feature matrix is Lambda(omega) = sum omega_{s,a} phi phi^T and its
G-criterion sigma(omega) = max_{s,a} ||phi(s,a)||^2_{Lambda(omega)^-1}.
By the Kiefer-Wolfowitz theorem min_omega sigma(omega) = d, attained by the
design maximising log det Lambda(omega).
"""
import math
from collections import namedtuple

import numpy as np
import scipy.linalg

from ._linbpi import SingularDesign, ConvergenceError
from .logging import logger
from .mdp import FeatureMap, flat_phi

DEFAULT_EPS_G = 0.01
FW_ITER_CAP = 100000
CONDITION_CAP = 1e12
PRUNE_BELOW = 1e-12
REFRESH_EVERY = 200

Design = namedtuple('Design', 'weights support sigma iterations',
                    defaults=(None, 0))


def _rows(features):
    if isinstance(features, FeatureMap):
        return flat_phi(features)
    return np.asarray(features, dtype=float)

def _weights(design):
    return design.weights if isinstance(design, Design) \
           else np.asarray(design, dtype=float)


def make_design(weights, sigma=None, iterations=0, tol=1e-12):
    """ Validated design; weights must be >= 0 and sum to 1 """
    weights = np.array(weights, dtype=float)
    if weights.ndim != 1 or len(weights) == 0:
        raise ValueError('design weights must be a non-empty vector')
    if weights.min() < 0:
        raise ValueError('design weights must be non-negative')
    if abs(weights.sum() - 1) > tol:
        raise ValueError('design weights sum to %.15g, not 1' % weights.sum())
    weights.setflags(write=False)
    return Design(weights, tuple(np.flatnonzero(weights > 0)), sigma,
                  iterations)

def uniform_design(n_pairs):
    return make_design(np.full(n_pairs, 1. / n_pairs))


def lambda_of_design(design, features):
    """ Lambda(omega) = sum_i omega_i phi_i phi_i^T """
    phis = _rows(features)
    w = _weights(design)
    if len(w) != len(phis):
        raise ValueError('design has %d weights for %d features' %
                         (len(w), len(phis)))
    lam = phis.T @ (w[:, None] * phis)
    return (lam + lam.T) / 2


def factor_lambda(lam, condition_cap=CONDITION_CAP):
    """ Cholesky factor of Lambda, refusing rank-deficient matrices """
    eigs = np.linalg.eigvalsh(lam)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > condition_cap:
        raise SingularDesign('feature matrix is singular (eigenvalues in '
                             '[%g, %g], condition cap %g)' %
                             (eigs[0], eigs[-1], condition_cap))
    return scipy.linalg.cho_factor(lam, lower=True)

def leverages(lam, phis, factor=None):
    """ ||phi_i||^2_{Lambda^-1} for every row of phis """
    if factor is None:
        factor = factor_lambda(lam)
    sol = scipy.linalg.cho_solve(factor, phis.T)
    return np.einsum('ij,ji->i', phis, sol)

def sigma_of_design(design, features):
    """ sigma(omega) from a single factorization of Lambda(omega) """
    phis = _rows(features)
    return float(leverages(lambda_of_design(design, phis), phis).max())

def log_det_of_design(design, features):
    """ D-criterion log det Lambda(omega) (-inf when singular) """
    sign, logdet = np.linalg.slogdet(lambda_of_design(design, features))
    return float(logdet) if sign > 0 else -math.inf


def g_optimal_design(features, eps_g=DEFAULT_EPS_G, iter_cap=FW_ITER_CAP):
    """
    eps_g-approximate G-optimal design by Frank-Wolfe (Fedorov-Wynn) with
    away steps, started from the uniform design.

    Each step moves omega toward (or away from) a single pair j,
    omega <- (1 - a) omega + a e_j, with the closed-form line search
    a = (g_j/d - 1)/(g_j - 1) where g_j = ||phi_j||^2_{Lambda^-1}; away
    steps are clipped so that omega_j stays >= 0. Stops once
    sigma(omega) <= (1 + eps_g) d and every support pair is within
    eps_g d of sigma(omega).
    """
    if eps_g <= 0:
        raise ValueError('eps_g must be positive, got %g' % eps_g)
    phis = _rows(features)
    n, d = phis.shape
    w = np.full(n, 1. / n)
    target = (1 + eps_g) * d
    converged = False
    refresh = True
    for iteration in range(iter_cap + 1):
        if refresh or iteration % REFRESH_EVERY == 0:
            lam = lambda_of_design(w, phis)
            factor = factor_lambda(lam)
            lam_inv = scipy.linalg.cho_solve(factor, np.eye(d))
            g = leverages(lam, phis, factor)
            refresh = False
        j_up = int(np.argmax(g))
        sigma = g[j_up]
        support = w > PRUNE_BELOW
        j_away = int(np.flatnonzero(support)[np.argmin(g[support])])
        logger.debug3('frank-wolfe %d: sigma %g, support %d', iteration,
                      sigma, support.sum())
        if sigma <= target and g[j_away] >= sigma - eps_g * d:
            converged = True
            break
        if iteration == iter_cap:
            break
        if sigma - d >= d - g[j_away]:
            j = j_up
            step = (sigma / d - 1) / (sigma - 1)
        else:
            j = j_away
            # log det decreases along e_j when g_j <= 1: drop the pair
            step = (g[j] / d - 1) / (g[j] - 1) if g[j] > 1 else -math.inf
            step = max(step, -w[j] / (1 - w[j]))
        if step >= 1:
            w = np.zeros(n)
            w[j] = 1.
            refresh = True
            continue
        # Rank-one update of Lambda^-1 and of all leverages
        c = step / (1 - step)
        u = lam_inv @ phis[j]
        v = phis @ u
        denom = 1 + c * g[j]
        lam_inv = (lam_inv - c * np.outer(u, u) / denom) / (1 - step)
        g = (g - c * v ** 2 / denom) / (1 - step)
        w = (1 - step) * w
        w[j] += step
        w[w < PRUNE_BELOW] = 0.
        w /= w.sum()
    w[w < PRUNE_BELOW] = 0.
    w /= w.sum()
    achieved = sigma_of_design(w, phis)
    if not converged:
        raise ConvergenceError('G-optimal design certificate not met after '
                               '%d iterations: sigma %g > %g' %
                               (iter_cap, achieved, target),
                               achieved=achieved)
    logger.info('G-optimal design: sigma %.6g (d=%d), support %d, '
                '%d iterations', achieved, d, int((w > 0).sum()), iteration)
    return make_design(w, sigma=achieved, iterations=iteration)


def spectral_sandwich(lam, lam_ref):
    """
    Extreme generalised eigenvalues (lo, hi) of lam w.r.t. lam_ref:
    lo lam_ref <= lam <= hi lam_ref in the Loewner order.
    """
    eigs = scipy.linalg.eigh(lam, lam_ref, eigvals_only=True)
    return float(eigs[0]), float(eigs[-1])


def concentration_time(d, delta, rho, eps_g, main_text=False):
    """
    Rounds after which (1-rho) Lambda~* <= Lambda(omega_t) <= (1+rho) Lambda~*
    holds with probability >= 1-delta when sampling i.i.d. from an
    eps_g-approximate G-optimal design:
    ceil(2 (1+eps_g) (1/rho^2 + 1/(3 rho)) d log(2d/delta)).
    main_text=True gives the looser 10 d log(2d/delta) stated for rho = 1/2.
    """
    if rho <= 0:
        raise ValueError('rho must be positive, got %g' % rho)
    if not 0 < delta < 1:
        raise ValueError('delta must lie in (0,1), got %g' % delta)
    if main_text:
        return int(math.ceil(10 * d * math.log(2 * d / delta)))
    return int(math.ceil(2 * (1 + eps_g) * (1 / rho ** 2 + 1 / (3 * rho)) *
                         d * math.log(2 * d / delta)))


def draw_pairs(design, n, rng):
    """ n i.i.d. flattened pair indices drawn from the design """
    w = _weights(design)
    return rng.choice(len(w), size=n, p=w)


class RealizedAllocation:
    """
    Sampling counts N_t over pairs; omega_t = N_t / t. Owned by a single run.
    """

    def __init__(self, n_pairs):
        self.counts = np.zeros(n_pairs, dtype=np.int64)
        self.t = 0

    def record(self, pair):
        self.counts[pair] += 1
        self.t += 1
        return self

    def record_batch(self, pairs):
        self.counts += np.bincount(pairs, minlength=len(self.counts))
        self.t += len(pairs)
        return self

    def frequencies(self):
        if self.t == 0:
            raise ValueError('no sample recorded yet')
        return self.counts / self.t

    def lambda_t(self, features):
        """ Lambda(omega_t) = Phi_t^T Phi_t / t """
        return lambda_of_design(self.frequencies(), features)

    def sigma_t(self, features):
        return sigma_of_design(self.frequencies(), features)


def record_sample(alloc, pair):
    return alloc.record(pair)
