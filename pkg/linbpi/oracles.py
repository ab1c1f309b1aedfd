"""
Executable versions of the bound chain behind GSS / GSS-E.

Each check evaluates both sides of an inequality that holds for every
instance; they serve as test oracles and as the `linbpi oracles` battery.
Margins are reported as (right-hand side - left-hand side), so a negative
margin beyond the numerical tolerance is a violation.
"""
import math
from collections import namedtuple

import numpy as np
import scipy.linalg
import scipy.special

from ._linbpi import (AbsoluteContinuityViolated, InstanceError,
                      ResampleBudgetExceeded, SingularDesign)
from .logging import logger
from .mdp import (is_episodic, solve, evaluate_policy, policy_q, flat_phi,
                  transition_matrix, mean_rewards, make_discounted_mdp,
                  make_episodic_mdp, is_epsilon_optimal, generate_instance,
                  sample_transitions)
from .design import (factor_lambda, sigma_of_design, lambda_of_design,
                     g_optimal_design, draw_pairs, RealizedAllocation)
from .estimation import (LseState, lse_update_batch, estimate_mdp,
                         plan_estimated_discounted, plan_estimated_episodic,
                         bootstrap_values, episodic_bootstrap_values,
                         bellman_residual_vector, weighted_sq_norm,
                         EstimatedMdp)
from .gss import (u_star_discounted, u_star_episodic, u_of_design_discounted,
                  u_of_design_episodic, log_bound_time)

CHECK_TOL = 1e-8
ALTERNATIVE_BUDGET = 2000

MdpPair = namedtuple('MdpPair', 'base alt absolutely_continuous')
ValueDiffReport = namedtuple('ValueDiffReport', 'same_policy optimal_policy')
BatteryLine = namedtuple('BatteryLine',
                         'lemma instances violations worst_margin')


def continuity_table(base, alt):
    """ Per-pair (per-step) flags: M(s,a) << M'(s,a) """
    steps = range(base.horizon) if is_episodic(base) else [None]
    table = []
    for h in steps:
        p, q = transition_matrix(base, h), transition_matrix(alt, h)
        r, r_alt = mean_rewards(base, h), mean_rewards(alt, h)
        ok = np.all((p <= 0) | (q > 0), axis=1)
        ok &= (r <= 0) | (r_alt > 0)
        ok &= (r >= 1) | (r_alt < 1)
        table.append(ok.reshape(base.features.n_states,
                                base.features.n_actions))
    return np.array(table) if is_episodic(base) else table[0]

def make_pair(base, alt):
    if type(base) is not type(alt):
        raise InstanceError('MDP pair mixes discounted and episodic models')
    if not np.array_equal(base.features.phi, alt.features.phi):
        raise InstanceError('MDP pair must share one feature map')
    if is_episodic(base):
        if base.horizon != alt.horizon:
            raise InstanceError('MDP pair horizons differ')
    elif base.gamma != alt.gamma:
        raise InstanceError('MDP pair discounts differ')
    return MdpPair(base, alt, bool(continuity_table(base, alt).all()))


def kl_mdp(pair, s, a, h=None):
    """
    KL(M(s,a) || M'(s,a)): Bernoulli reward KL plus categorical transition
    KL, natural logarithm.
    """
    table = continuity_table(pair.base, pair.alt)
    if not (table[h, s, a] if h is not None else table[s, a]):
        raise AbsoluteContinuityViolated('M is not absolutely continuous '
                                         'w.r.t. M\' at (s=%d, a=%d)' % (s, a))
    i = s * pair.base.features.n_actions + a
    r = mean_rewards(pair.base, h)[i]
    r_alt = mean_rewards(pair.alt, h)[i]
    p = np.clip(transition_matrix(pair.base, h)[i], 0, None)
    q = np.clip(transition_matrix(pair.alt, h)[i], 0, None)
    kl_reward = scipy.special.rel_entr(r, r_alt) + \
                scipy.special.rel_entr(1 - r, 1 - r_alt)
    return float(kl_reward + scipy.special.rel_entr(p, q).sum())

def weighted_kl(pair, design_weights):
    """ sum_h sum_{s,a} omega_{s,a} KL(h, s, a) """
    base = pair.base
    S, A = base.features.n_states, base.features.n_actions
    steps = range(base.horizon) if is_episodic(base) else [None]
    total = 0.
    for h in steps:
        w = design_weights[h] if np.ndim(design_weights) == 2 \
            else design_weights
        for i in np.flatnonzero(w > 0):
            s, a = divmod(int(i), A)
            total += w[i] * kl_mdp(pair, s, a, h)
    return total


def relaxed_characteristic_inverse(mdp, design, epsilon, solution=None):
    """
    Certified lower bound on T(M, omega)^-1:
    3 (1-gamma)^4 (Delta+eps)^2 / (10 sigma(omega)) discounted,
    3 (Delta+eps)^2 / (10 H^2 sum_h sigma(omega_h)) episodic, where design
    is one design (used at every step) or a list of H designs.
    """
    if solution is None:
        solution = solve(mdp)
    gap = solution.gap + epsilon
    if is_episodic(mdp):
        H = mdp.horizon
        designs = design if isinstance(design, (list, tuple)) else [design] * H
        sigmas = sum(sigma_of_design(w, mdp.features) for w in designs)
        return 3 * gap ** 2 / (10 * H ** 2 * sigmas)
    sigma = sigma_of_design(design, mdp.features)
    return 3 * (1 - mdp.gamma) ** 4 * gap ** 2 / (10 * sigma)


def optimization_closed_form(phis, lambdas, delta):
    """
    inf { sum_i ||x_i||^2_{Lambda_i} : sum_i |phi_i^T x_i| >= Delta }
    = Delta^2 / sum_i ||phi_i||^2_{Lambda_i^-1}, attained at
    x_i = Delta Lambda_i^-1 phi_i / sum_j ||phi_j||^2_{Lambda_j^-1}.
    Returns (value, optimizer).
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    solved = []
    for phi, lam in zip(phis, lambdas):
        factor = factor_lambda(np.asarray(lam, dtype=float))
        solved.append(scipy.linalg.cho_solve(factor, phi))
    solved = np.array(solved)
    total = float(np.einsum('ij,ij->', phis, solved))
    return delta ** 2 / total, delta * solved / total

def optimization_projected_gradient(phis, lambdas, delta, iter_cap=200000,
                                    tol=1e-13):
    """
    Numerical minimiser of sum_i x_i^T Lambda_i x_i on the affine set
    sum_i phi_i^T x_i = Delta by projected gradient descent (step 1/L).
    """
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    lambdas = np.asarray(lambdas, dtype=float)
    c = phis.ravel()
    cc = c @ c

    def project(x):
        return x + (delta - c @ x) * c / cc

    L = 2 * max(np.linalg.eigvalsh(lam)[-1] for lam in lambdas)
    x = project(np.zeros_like(c))
    n, d = phis.shape
    for iteration in range(iter_cap):
        grad = 2 * np.einsum('ijk,ik->ij', lambdas,
                             x.reshape(n, d)).ravel()
        x_new = project(x - grad / L)
        if np.abs(x_new - x).max() < tol:
            x = x_new
            break
        x = x_new
    X = x.reshape(n, d)
    return float(np.einsum('ij,ijk,ik->', X, lambdas, X)), X


def kl_pinsker_variant_check(alpha, beta, f):
    """
    Both sides of KL(alpha || beta) >= 6 / (5 ||f||^2) (E_alpha f - E_beta f)^2
    for finite distributions and a bounded f >= 0.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any((alpha > 0) & (beta <= 0)):
        raise AbsoluteContinuityViolated('supp(alpha) is not included in '
                                         'supp(beta)')
    if f.min() < 0:
        raise ValueError('f must be non-negative')
    lhs = float(scipy.special.rel_entr(alpha, beta).sum())
    f_sup = np.abs(f).max()
    if f_sup == 0:
        return lhs, 0.
    return lhs, 6. / (5 * f_sup ** 2) * float(alpha @ f - beta @ f) ** 2


def _sup(x):
    return float(np.abs(x).max())

def gap_bound_margin(pair, epsilon, tol=1e-9):
    """
    Margin of Delta(M) + eps <= ||V*_M - V^{pi*_M}_M'|| + ||Q*_M - Q*_M'||
    (best step for episodic MDPs). None when pi*_M is eps-optimal in M'.
    """
    base, alt = pair.base, pair.alt
    sol, sol_alt = solve(base), solve(alt)
    if is_epsilon_optimal(alt, sol.policy, epsilon, tol=tol,
                          solution=sol_alt):
        return None
    V_cross = evaluate_policy(alt, sol.policy)
    lhs = sol.gap + epsilon
    if is_episodic(base):
        rhs = max(_sup(sol.V[h] - V_cross[h]) + _sup(sol.Q[h] - sol_alt.Q[h])
                  for h in range(base.horizon))
    else:
        rhs = _sup(sol.V - V_cross) + _sup(sol.Q - sol_alt.Q)
    return rhs - lhs

def gap_bound_check(pair, epsilon):
    """ True / False, or None when the hypothesis does not hold """
    margin = gap_bound_margin(pair, epsilon)
    return None if margin is None else margin >= -CHECK_TOL


def _residual_sup(base, alt, values, h=None):
    """ max_{s,a} |phi^T (theta - theta' + gamma (mu - mu')^T V)| """
    est = EstimatedMdp(base.theta, base.mu, False, 0)
    resid = bellman_residual_vector(alt, est, values, h)
    return _sup(flat_phi(base.features) @ resid)

def _value_diff_margins(base, alt, V, V_alt, Q, Q_alt):
    if is_episodic(base):
        H = base.horizon
        V_next = np.vstack([V[1:], np.zeros((1, V.shape[1]))])
        terms = [_residual_sup(base, alt, V_next[h], h) for h in range(H)]
        margins = []
        for h0 in range(H):
            a, b = _sup(V[h0] - V_alt[h0]), _sup(Q[h0] - Q_alt[h0])
            margins.append((b - a, sum(terms[h0:]) - b))
        return margins
    a, b = _sup(V - V_alt), _sup(Q - Q_alt)
    c = _residual_sup(base, alt, V) / (1 - base.gamma)
    return [(b - a, c - b)]

def value_diff_checks(pair, policy):
    """
    Margins of the chained inequalities
    ||V_M - V_M'|| <= ||Q_M - Q_M'|| <= 1/(1-gamma) max |phi^T(...)|
    for a fixed policy and for the optimal policies (episodic: for every
    starting step h0, with the sum over h >= h0 on the right).
    """
    base, alt = pair.base, pair.alt
    same = _value_diff_margins(base, alt,
                               evaluate_policy(base, policy),
                               evaluate_policy(alt, policy),
                               policy_q(base, policy), policy_q(alt, policy))
    sol, sol_alt = solve(base), solve(alt)
    optimal = _value_diff_margins(base, alt, sol.V, sol_alt.V, sol.Q,
                                  sol_alt.Q)
    return ValueDiffReport(same, optimal)

def value_diff_violations(report, tol=CHECK_TOL):
    return sum(m < -tol for pair in report.same_policy + report.optimal_policy
               for m in pair)


def _plan_estimate(mdp, est):
    if is_episodic(mdp):
        return plan_estimated_episodic(est, mdp.features, mdp.horizon)
    return plan_estimated_discounted(est, mdp.features, mdp.gamma)

def _estimate_residuals(mdp, est, est_solution):
    """ Bellman residual vectors of the estimate at its own values """
    if is_episodic(mdp):
        V_next = episodic_bootstrap_values(est_solution, mdp.horizon)
        return [bellman_residual_vector(mdp, est, V_next[h], h)
                for h in range(mdp.horizon)]
    vmax = 1. / (1 - mdp.gamma)
    return [bellman_residual_vector(mdp, est,
                                    bootstrap_values(est_solution, vmax))]

def gap_continuity_margin(mdp, est, solution=None, est_solution=None):
    """
    Margin of |Delta(M^) - Delta(M)| <= 2/(1-gamma) max |phi^T resid|
    (2 sum_h max |phi^T resid_h| episodic). None if the plug-in planner
    did not converge.
    """
    if solution is None:
        solution = solve(mdp)
    if est_solution is None:
        est_solution = _plan_estimate(mdp, est)
    if not est_solution.converged:
        return None
    phis = flat_phi(mdp.features)
    terms = [_sup(phis @ r) for r in _estimate_residuals(mdp, est,
                                                         est_solution)]
    if is_episodic(mdp):
        rhs = 2 * sum(terms)
    else:
        rhs = 2 * terms[0] / (1 - mdp.gamma)
    return rhs - abs(est_solution.gap - solution.gap)

def gap_continuity_check(mdp, est, solution=None, est_solution=None):
    margin = gap_continuity_margin(mdp, est, solution, est_solution)
    return None if margin is None else margin >= -CHECK_TOL

def u_diff_margin(mdp, est, design, epsilon=0., solution=None,
                  est_solution=None):
    """
    Margin of |U*(M)^-1 - U(M^, omega)^-1| <= B with
    B = 6 (1-gamma)^2 ||resid||^2_Lambda + (5/4 - d/sigma(omega)) U*(M)^-1
    (6/H^2 sum_h ||resid_h||^2_Lambda + ... episodic).
    """
    if solution is None:
        solution = solve(mdp)
    if est_solution is None:
        est_solution = _plan_estimate(mdp, est)
    if not est_solution.converged or math.isinf(est_solution.gap):
        return None
    d = mdp.features.dim
    lam = lambda_of_design(design, mdp.features)
    sigma = sigma_of_design(design, mdp.features)
    norms = [weighted_sq_norm(r, lam)
             for r in _estimate_residuals(mdp, est, est_solution)]
    if is_episodic(mdp):
        H = mdp.horizon
        u_inv = 1. / u_star_episodic(d, H, solution.gap, epsilon)
        u_hat_inv = 1. / u_of_design_episodic(sigma, H, est_solution.gap,
                                              epsilon) \
                    if est_solution.gap + epsilon > 0 else 0.
        bound = 6. / H ** 2 * sum(norms)
    else:
        u_inv = 1. / u_star_discounted(d, mdp.gamma, solution.gap, epsilon)
        u_hat_inv = 1. / u_of_design_discounted(sigma, mdp.gamma,
                                                est_solution.gap, epsilon) \
                    if est_solution.gap + epsilon > 0 else 0.
        bound = 6 * (1 - mdp.gamma) ** 2 * norms[0]
    bound += (5. / 4 - d / sigma) * u_inv
    return bound - abs(u_inv - u_hat_inv)

def u_diff_check(mdp, est, design, epsilon=0., solution=None,
                 est_solution=None):
    margin = u_diff_margin(mdp, est, design, epsilon, solution, est_solution)
    return None if margin is None else margin >= -CHECK_TOL


def xi_check(mdp, policy):
    """
    Q^pi(s,a) = phi(s,a)^T xi with xi = theta + gamma mu^T V^pi
    (xi_h = theta_h + mu_h^T V_{h+1} episodic). Returns
    (max parametrisation error, max ||xi||, norm bound).
    """
    d = mdp.features.dim
    phis = flat_phi(mdp.features)
    V = evaluate_policy(mdp, policy)
    Q = policy_q(mdp, policy)
    if is_episodic(mdp):
        H = mdp.horizon
        V_next = np.vstack([V[1:], np.zeros((1, V.shape[1]))])
        xis = [mdp.theta[h] + mdp.mu[h].T @ V_next[h] for h in range(H)]
        errors = [_sup(phis @ xi - Q[h].ravel()) for h, xi in enumerate(xis)]
        bound = H * math.sqrt(d)
    else:
        xis = [mdp.theta + mdp.gamma * mdp.mu.T @ V]
        errors = [_sup(phis @ xis[0] - Q.ravel())]
        bound = math.sqrt(d) / (1 - mdp.gamma)
    return max(errors), max(np.linalg.norm(xi) for xi in xis), bound


def random_alternative(mdp, rng, scale=None, budget=ALTERNATIVE_BUDGET):
    """
    Valid alternative sharing the feature map: theta and mu are mixed with
    random parameters (uniform rewards, Dirichlet state distributions) and
    re-validated; rejected draws are retried with a smaller mix.
    """
    features = mdp.features
    S, d = features.n_states, features.dim
    steps = mdp.horizon if is_episodic(mdp) else 1
    c = rng.uniform(0.1, 1.) if scale is None else scale
    for attempt in range(budget):
        thetas, mus = [], []
        for h in range(steps):
            theta = mdp.theta[h] if is_episodic(mdp) else mdp.theta
            mu = mdp.mu[h] if is_episodic(mdp) else mdp.mu
            thetas.append((1 - c) * theta + c * rng.random(d))
            mus.append((1 - c) * mu +
                       c * rng.dirichlet(np.ones(S), size=d).T)
        try:
            if is_episodic(mdp):
                return make_episodic_mdp(features, thetas, mus)
            return make_discounted_mdp(features, mdp.gamma, thetas[0], mus[0])
        except InstanceError:
            c /= 2
    raise ResampleBudgetExceeded('no valid alternative after %d attempts' %
                                 budget)

def qualifying_alternative(mdp, epsilon, rng, solution=None,
                           budget=ALTERNATIVE_BUDGET):
    """ Random alternative M' with pi*_M not in Pi*_eps(M') """
    if solution is None:
        solution = solve(mdp)
    for attempt in range(budget):
        alt = random_alternative(mdp, rng)
        if not is_epsilon_optimal(alt, solution.policy, epsilon):
            return alt
    raise ResampleBudgetExceeded('no qualifying alternative after %d '
                                 'attempts' % budget)


def replay_estimates(mdp, design, checkpoints, rng):
    """
    Sample i.i.d. from the design as GSS does, yielding
    (t, estimate, allocation) at each checkpoint round.
    """
    features = mdp.features
    steps = mdp.horizon if is_episodic(mdp) else 1
    states = [LseState(features) for h in range(steps)]
    alloc = RealizedAllocation(features.n_states * features.n_actions)
    for t in sorted(checkpoints):
        k = t - alloc.t
        if k <= 0:
            continue
        pairs = draw_pairs(design, k, rng)
        for h, state in enumerate(states):
            rewards, next_states = sample_transitions(
                mdp, pairs, rng, h if is_episodic(mdp) else None)
            lse_update_batch(state, pairs, rewards, next_states)
        alloc.record_batch(pairs)
        yield t, estimate_mdp(states if is_episodic(mdp) else states[0]), alloc


def _battery_instances(rng, n, episodic=False):
    for i in range(n):
        d = int(rng.integers(2, 5))
        S = int(rng.integers(2, 5))
        A = int(rng.integers(max(2, -(-d // S)), 4))
        if episodic:
            yield generate_instance(d, S, A, horizon=int(rng.integers(1, 4)),
                                    min_gap=1e-3, rng=rng)
        else:
            yield generate_instance(d, S, A, gamma=float(rng.uniform(0.3, 0.9)),
                                    min_gap=1e-3, rng=rng)

def _summarise(lemma, margins, tol=CHECK_TOL):
    margins = [m for m in margins if m is not None]
    worst = min(margins) if margins else math.nan
    line = BatteryLine(lemma, len(margins), sum(m < -tol for m in margins),
                       worst)
    logger.info('%s: %d instances, %d violations, worst margin %g', *line)
    return line

def run_battery(rng, quick=False):
    """
    Run every lemma check over its randomized suite. quick divides the
    suite sizes by 10.
    """
    scale = 10 if quick else 1
    n_pairs, n_kl, n_opt = 100 // scale, 10000 // scale, 100 // scale
    lines = []

    margins = []
    for episodic in (False, True):
        for mdp in _battery_instances(rng, n_pairs // 2, episodic):
            eps = float(rng.uniform(0.01, 0.2))
            try:
                alt = qualifying_alternative(mdp, eps, rng)
            except ResampleBudgetExceeded:
                continue
            margins.append(gap_bound_margin(make_pair(mdp, alt), eps))
    lines.append(_summarise('gap_bound', margins))

    margins = []
    for episodic in (False, True):
        for mdp in _battery_instances(rng, n_pairs // 2, episodic):
            pair = make_pair(mdp, random_alternative(mdp, rng))
            S, A = mdp.features.n_states, mdp.features.n_actions
            shape = (mdp.horizon, S) if episodic else (S,)
            report = value_diff_checks(pair, rng.integers(0, A, size=shape))
            margins.extend(m for pr in report.same_policy +
                           report.optimal_policy for m in pr)
    lines.append(_summarise('value_diff', margins))

    margins = []
    for i in range(n_kl):
        n = int(rng.integers(1, 11))
        alpha = rng.dirichlet(np.ones(n))
        beta = rng.dirichlet(np.ones(n))
        if n > 1 and rng.random() < 0.3:
            alpha[rng.integers(n)] = 0.
            alpha /= alpha.sum()
        lhs, rhs = kl_pinsker_variant_check(alpha, beta,
                                            rng.random(n) * rng.uniform(0.1, 10))
        margins.append(lhs - rhs)
    lines.append(_summarise('kl_pinsker_variant', margins))

    margins = []
    for i in range(n_opt):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        phis = rng.normal(size=(n, d))
        lambdas = []
        for j in range(n):
            B = rng.normal(size=(d, d))
            lambdas.append(B @ B.T / d + np.eye(d))
        delta = float(rng.uniform(0.1, 2))
        value, X = optimization_closed_form(phis, lambdas, delta)
        numeric, Y = optimization_projected_gradient(phis, lambdas, delta)
        margins.append(1e-6 - abs(value - numeric) / value)
    lines.append(_summarise('optimization', margins, tol=0))

    margins = []
    for mdp in _battery_instances(rng, n_pairs // 2):
        eps = float(rng.uniform(0.01, 0.2))
        sol = solve(mdp)
        design = g_optimal_design(mdp.features)
        value = relaxed_characteristic_inverse(mdp, design.weights, eps, sol)
        try:
            alt = qualifying_alternative(mdp, eps, rng, sol)
        except ResampleBudgetExceeded:
            continue
        margins.append(weighted_kl(make_pair(mdp, alt), design.weights) -
                       value)
    lines.append(_summarise('relaxed_characteristic', margins))

    gap_margins, u_margins = [], []
    for episodic in (False, True):
        for mdp in _battery_instances(rng, max(1, n_pairs // 10), episodic):
            sol = solve(mdp)
            design = g_optimal_design(mdp.features)
            for t, est, alloc in replay_estimates(mdp, design,
                                                  [10, 30, 100, 300, 1000],
                                                  rng):
                est_sol = _plan_estimate(mdp, est)
                gap_margins.append(gap_continuity_margin(mdp, est, sol,
                                                         est_sol))
                try:
                    u_margins.append(u_diff_margin(mdp, est,
                                                   alloc.frequencies(), 0.,
                                                   sol, est_sol))
                except SingularDesign as e:
                    logger.debug('u_diff skipped at t=%d: %s', t, e)
    lines.append(_summarise('gap_continuity', gap_margins))
    lines.append(_summarise('u_diff', u_margins))

    margins = []
    for a in np.linspace(1, 1000, 25):
        for b in np.linspace(0, 1000, 25):
            t = log_bound_time(a, b)
            margins.append(t - a * math.log(t) - b)
    lines.append(_summarise('log_bound_time', margins, tol=0))

    margins = []
    for episodic in (False, True):
        for mdp in _battery_instances(rng, n_pairs // 4, episodic):
            S, A = mdp.features.n_states, mdp.features.n_actions
            shape = (mdp.horizon, S) if episodic else (S,)
            error, norm, bound = xi_check(mdp, rng.integers(0, A, size=shape))
            margins.append(min(1e-9 - error, bound - norm))
    lines.append(_summarise('xi', margins, tol=0))
    return lines
