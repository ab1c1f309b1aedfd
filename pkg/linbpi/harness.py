"""
Batch experiments: plans of (instance, delta, epsilon) cells, seeded trials
run by a process pool, per-cell aggregation and reports.

Every trial gets its own seed derived from (master seed, cell id, trial
index) so results do not depend on the number of workers or on scheduling.
"""
import hashlib
import json
import math
import os.path as op
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from ._linbpi import ConfigurationError, LinBpiError, data_path
from .logging import logger
from .mdp import (load_instance, instance_from_dict, is_episodic, solve,
                  mode_of, gamma_or_horizon, make_discounted_mdp,
                  make_episodic_mdp)
from .design import g_optimal_design, DEFAULT_EPS_G
from .gss import (make_stopping_config, run_identification, u_star,
                  predicted_stop_time, lower_bound_reference,
                  T_MAX_FACTOR, DEFAULT_STRIDE)

Z_95 = 1.959963984540054
SEED_MASK = (1 << 63) - 1

PlanCell = namedtuple('PlanCell', 'instance deltas epsilons trials gap_sweep')
ExperimentPlan = namedtuple('ExperimentPlan',
                            'cells master_seed stride eps_g t_max_factor '
                            't_max')
CellRun = namedtuple('CellRun',
                     'cell_id label mdp design delta epsilon scale trials gap '
                     'u_star predicted t_max')
TrialRow = namedtuple('TrialRow', 'cell_id trial seed record error')
SummaryRow = namedtuple('SummaryRow',
                        'cell_id instance delta epsilon scale trials '
                        'completed capped errors failures tau_mean '
                        'tau_median tau_p95 failure_rate failure_ci_low '
                        'failure_ci_high gap u_star predicted_stop_time '
                        'lower_bound_reference')
PlanResult = namedtuple('PlanResult', 'trials summaries cells')

TRIAL_COLUMNS = ['cell_id', 'trial', 'seed', 'tau', 'correct', 'capped',
                 'n_checks', 'planner_failures', 'policy', 'error',
                 'wallclock_ms']


def derive_seed(master_seed, cell_id, trial_index):
    """
    SHA-256 of "<master>|<cell_id>|<index>" (UTF-8), first 8 bytes read
    big-endian and masked to 63 bits.
    """
    key = '%d|%s|%d' % (master_seed, cell_id, trial_index)
    digest = hashlib.sha256(key.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'big') & SEED_MASK

def cell_id_of(label, delta, epsilon, scale=None):
    return '%s|d=%r|e=%r|s=%r' % (label, float(delta), float(epsilon),
                                  1. if scale is None else float(scale))


def _check_grid(values, name):
    if not isinstance(values, (list, tuple)) or len(values) == 0:
        raise ConfigurationError('%s must be a non-empty list' % name)
    return [float(v) for v in values]

def make_plan(cells, master_seed=0, stride=DEFAULT_STRIDE, eps_g=DEFAULT_EPS_G,
              t_max_factor=T_MAX_FACTOR, t_max=None):
    if len(cells) == 0:
        raise ConfigurationError('plan has no cell')
    parsed = []
    for i, cell in enumerate(cells):
        if isinstance(cell, PlanCell):
            cell = cell._asdict()
        try:
            instance = cell['instance']
            deltas = _check_grid(cell['deltas'], 'cell %d deltas' % i)
            epsilons = _check_grid(cell['epsilons'], 'cell %d epsilons' % i)
            trials = int(cell['trials'])
        except KeyError as e:
            raise ConfigurationError('plan cell %d is missing field %s' %
                                     (i, e))
        if any(not 0 < delta < 1 for delta in deltas):
            raise ConfigurationError('cell %d: deltas must lie in (0,1)' % i)
        if any(epsilon < 0 for epsilon in epsilons):
            raise ConfigurationError('cell %d: epsilons must be >= 0' % i)
        if trials < 1:
            raise ConfigurationError('cell %d: trials must be >= 1, got %d' %
                                     (i, trials))
        sweep = cell.get('gap_sweep')
        if sweep is not None:
            sweep = _check_grid(sweep, 'cell %d gap_sweep' % i)
        parsed.append(PlanCell(instance, deltas, epsilons, trials, sweep))
    if int(stride) < 1:
        raise ConfigurationError('stride must be >= 1, got %r' % stride)
    if t_max_factor <= 0:
        raise ConfigurationError('t_max_factor must be positive, got %r' %
                                 t_max_factor)
    return ExperimentPlan(parsed, int(master_seed), int(stride), float(eps_g),
                          float(t_max_factor),
                          None if t_max is None else int(t_max))

def load_plan(source):
    """ Plan from a dict, a JSON file or a bundled plan name """
    if isinstance(source, ExperimentPlan):
        return source
    if not isinstance(source, dict):
        source = str(source)
        if op.exists(source):
            with open(source) as fin:
                source = json.load(fin)
        else:
            return bundled_plan(source)
    data = dict(source)
    cells = data.pop('cells', [])
    unknown = set(data) - {'master_seed', 'stride', 'eps_g', 't_max_factor',
                           't_max'}
    if unknown:
        raise ConfigurationError('unknown plan field(s): %s' %
                                 ', '.join(sorted(unknown)))
    return make_plan(cells, **data)

def bundled_plan(name):
    res = data_path(name if name.endswith('.json') else name + '.json')
    if not res.is_file():
        raise ConfigurationError('no plan file or bundled plan named %r' %
                                 name)
    return load_plan(json.loads(res.read_text()))


def gap_sweep(base, scales, tol=1e-9):
    """
    Family of instances theta_c = c theta + (1-c) mean(theta) 1 (per step
    for episodic MDPs). Needs simplex features (every phi row sums to 1):
    then r becomes c r + (1-c) mean(theta), which scales every action-value
    difference, hence the gap, by c. Each instance is re-validated.
    """
    row_sums = base.features.phi.sum(axis=-1)
    if np.abs(row_sums - 1).max() > tol:
        raise ConfigurationError('gap sweeps need features whose entries '
                                 'sum to 1, got row sums in [%g, %g]' %
                                 (row_sums.min(), row_sums.max()))
    family = []
    for c in scales:
        if c <= 0:
            raise ConfigurationError('sweep scales must be positive, got %r'
                                     % c)
        theta = c * base.theta + (1 - c) * \
                base.theta.mean(axis=-1, keepdims=True)
        if is_episodic(base):
            mdp = make_episodic_mdp(base.features, theta, base.mu,
                                    base.reward_noise)
        else:
            mdp = make_discounted_mdp(base.features, base.gamma, theta,
                                      base.mu, base.reward_noise)
        family.append((float(c), mdp))
    return family


def _instance_label(instance, index):
    if isinstance(instance, dict):
        return 'inline%d' % index
    return op.splitext(op.basename(str(instance)))[0]

def _load_cell_instance(instance):
    if isinstance(instance, dict):
        return instance_from_dict(instance)
    return load_instance(instance)

def expand_plan(plan):
    """ One CellRun per (instance[, scale], delta, epsilon) """
    runs = []
    for i, cell in enumerate(plan.cells):
        label = _instance_label(cell.instance, i)
        base = _load_cell_instance(cell.instance)
        if cell.gap_sweep is None:
            family = [(None, base)]
        else:
            family = gap_sweep(base, cell.gap_sweep)
        for scale, mdp in family:
            gap = solve(mdp).gap
            design = g_optimal_design(mdp.features, plan.eps_g)
            horizon = mdp.horizon if is_episodic(mdp) else None
            for delta in cell.deltas:
                for epsilon in cell.epsilons:
                    cell_id = cell_id_of(label, delta, epsilon, scale)
                    try:
                        u = u_star(mdp, gap, epsilon)
                        predicted = predicted_stop_time(
                            u, delta, mdp.features.dim, horizon)
                    except LinBpiError as e:
                        # trials still run: capped under an explicit
                        # t_max, error rows otherwise
                        logger.warning('%s: %s', cell_id, e)
                        u, predicted = math.inf, None
                    t_max = plan.t_max
                    if t_max is None and predicted is not None:
                        t_max = int(plan.t_max_factor * predicted)
                    runs.append(CellRun(
                        cell_id, label, mdp, design, delta, epsilon, scale,
                        cell.trials, gap, u, predicted, t_max))
    return runs


def _run_trial(args):
    cell_id, trial, seed, mdp, config, eps_g, design, trace = args
    try:
        record = run_identification(mdp, config, eps_g=eps_g, seed=seed,
                                    design=design, trace=trace)
        return TrialRow(cell_id, trial, seed, record, None)
    except LinBpiError as e:
        logger.error('%s trial %d failed: %s', cell_id, trial, e)
        return TrialRow(cell_id, trial, seed, None,
                        '%s: %s' % (type(e).__name__, e))

def _work_items(plan, runs, trace=False):
    for run in runs:
        config = make_stopping_config(run.delta, run.epsilon, plan.stride,
                                      run.t_max)
        for trial in range(run.trials):
            yield (run.cell_id, trial,
                   derive_seed(plan.master_seed, run.cell_id, trial),
                   run.mdp, config, plan.eps_g, run.design, trace)

def run_plan(plan, worker_count=1, trace=False):
    """
    Run every trial of the plan, with worker_count processes when > 1.
    Per-trial failures are recorded in TrialRow.error. trace=True keeps
    the per-check Z(t) and estimation diagnostics in each record. Returns
    PlanResult(trials, summaries, cells), in plan order.
    """
    plan = load_plan(plan)
    runs = expand_plan(plan)
    items = list(_work_items(plan, runs, trace))
    logger.info('running %d trials over %d cells with %d worker(s)',
                len(items), len(runs), worker_count)
    if worker_count > 1:
        with ProcessPoolExecutor(max_workers=worker_count) as executor:
            rows = list(executor.map(_run_trial, items))
    else:
        rows = [_run_trial(item) for item in items]
    by_cell = {}
    for row in rows:
        by_cell.setdefault(row.cell_id, []).append(row)
    summaries = [summarize_cell(run, by_cell.get(run.cell_id, []))
                 for run in runs]
    return PlanResult(rows, summaries, runs)


def nearest_rank(sorted_values, q):
    """ Nearest-rank percentile: element ceil(q n) (1-based) """
    n = len(sorted_values)
    return sorted_values[max(1, int(math.ceil(q * n))) - 1]

def failure_interval(failures, n):
    """ Normal approximation p +/- 1.96 sqrt(p (1-p) / n), clipped to [0,1] """
    if n == 0:
        return math.nan, math.nan, math.nan
    p = failures / n
    half = Z_95 * math.sqrt(p * (1 - p) / n)
    return p, max(0., p - half), min(1., p + half)

def summarize_cell(run, rows):
    """
    Aggregates of one cell. tau statistics and the failure rate use the
    completed (stopped, error-free) trials only.
    """
    records = [r.record for r in rows if r.record is not None]
    completed = [rec for rec in records if not rec.capped]
    failures = sum(rec.correct is False for rec in completed)
    taus = sorted(rec.tau for rec in completed)
    if taus:
        tau_mean = float(np.mean(taus))
        tau_median = float(np.median(taus))
        tau_p95 = float(nearest_rank(taus, 0.95))
    else:
        tau_mean = tau_median = tau_p95 = math.nan
    rate, lo, hi = failure_interval(failures, len(completed))
    summary = SummaryRow(run.cell_id, run.label, run.delta, run.epsilon,
                         run.scale, len(rows), len(completed),
                         len(records) - len(completed),
                         len(rows) - len(records), failures, tau_mean,
                         tau_median, tau_p95, rate, lo, hi, run.gap,
                         run.u_star, run.predicted,
                         lower_bound_reference(run.u_star, run.delta))
    logger.info('%s: %d/%d completed, mean tau %g, failure rate %g',
                run.cell_id, summary.completed, summary.trials, tau_mean,
                rate)
    return summary

def acceptance_failures(summaries):
    """
    Cells whose failure rate exceeds delta + 3 sqrt(delta (1-delta) / n),
    or with errored trials.
    """
    failed = []
    for row in summaries:
        if row.errors > 0:
            failed.append(row.cell_id)
        elif row.completed > 0:
            tol = 3 * math.sqrt(row.delta * (1 - row.delta) / row.completed)
            if row.failure_rate > row.delta + tol:
                failed.append(row.cell_id)
    return failed


def fit_loglog_slope(x, y):
    """ Least-squares slope of log y against log x """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2:
        raise ValueError('need at least two points to fit a slope')
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])

def sweep_slopes(summaries):
    """
    Log-log slope of mean tau against (gap + epsilon)^-2 for every swept
    (instance, delta, epsilon) group with at least two finite points.
    """
    groups = {}
    for row in summaries:
        if row.scale is None or not math.isfinite(row.tau_mean):
            continue
        key = (row.instance, row.delta, row.epsilon)
        groups.setdefault(key, []).append(row)
    slopes = {}
    for key, rows in groups.items():
        if len(rows) < 2:
            continue
        x = [(r.gap + r.epsilon) ** -2 for r in rows]
        slopes[key] = fit_loglog_slope(x, [r.tau_mean for r in rows])
    return slopes


def trials_frame(trials, include_timing=False):
    records = []
    for row in trials:
        rec = row.record
        records.append({
            'cell_id': row.cell_id, 'trial': row.trial, 'seed': row.seed,
            'tau': None if rec is None else rec.tau,
            'correct': None if rec is None else rec.correct,
            'capped': None if rec is None else rec.capped,
            'n_checks': None if rec is None else rec.n_checks,
            'planner_failures': None if rec is None else rec.planner_failures,
            'policy': None if rec is None else
                      ' '.join(str(a) for a in np.ravel(rec.returned_policy)),
            'error': row.error,
            'wallclock_ms': None if rec is None else rec.wallclock_ms})
    columns = TRIAL_COLUMNS if include_timing else TRIAL_COLUMNS[:-1]
    return pd.DataFrame(records, columns=TRIAL_COLUMNS)[columns]

RUN_COLUMNS = ['seed', 'mode', 'd', 'S', 'A', 'gamma_or_H', 'delta',
               'epsilon', 'gap', 'sigma_star', 'tau', 'correct', 'capped',
               'wallclock_ms']

def run_frame(result):
    """ One row per trial with the instance and run settings """
    cells = {run.cell_id: run for run in result.cells}
    records = []
    for row in result.trials:
        run = cells[row.cell_id]
        features, rec = run.mdp.features, row.record
        records.append({
            'seed': row.seed, 'mode': mode_of(run.mdp), 'd': features.dim,
            'S': features.n_states, 'A': features.n_actions,
            'gamma_or_H': gamma_or_horizon(run.mdp), 'delta': run.delta,
            'epsilon': run.epsilon, 'gap': run.gap,
            'sigma_star': run.design.sigma,
            'tau': None if rec is None else rec.tau,
            'correct': None if rec is None else rec.correct,
            'capped': None if rec is None else rec.capped,
            'wallclock_ms': None if rec is None else rec.wallclock_ms})
    return pd.DataFrame(records, columns=RUN_COLUMNS)

TRACE_COLUMNS = ['cell_id', 'trial', 'seed', 't', 'theta_error',
                 'transition_violation', 'z', 'threshold']

def trace_frame(trials):
    """
    One row per stopping check of every traced trial: the estimation
    diagnostics (step 1 in episodic mode) joined with (Z(t), threshold),
    which are missing for checks skipped before Z was computed.
    """
    frames = []
    for row in trials:
        rec = row.record
        if rec is None or rec.estimation_trace is None:
            continue
        est = pd.DataFrame(rec.estimation_trace,
                           columns=['t', 'theta_error',
                                    'transition_violation'],
                           dtype=float).astype({'t': 'int64'})
        z = pd.DataFrame(rec.z_trace, columns=['t', 'z', 'threshold'],
                         dtype=float).astype({'t': 'int64'})
        frame = est.merge(z, on='t', how='left')
        frame.insert(0, 'seed', row.seed)
        frame.insert(0, 'trial', row.trial)
        frame.insert(0, 'cell_id', row.cell_id)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=TRACE_COLUMNS)
    return pd.concat(frames, ignore_index=True)[TRACE_COLUMNS]

def summary_frame(summaries):
    return pd.DataFrame([s._asdict() for s in summaries],
                        columns=SummaryRow._fields)

def summary_text(summaries, slopes):
    lines = []
    for s in summaries:
        lines.append('%s: trials %d completed %d capped %d errors %d | '
                     'tau mean %.6g median %.6g p95 %.6g | failure rate '
                     '%.4g [%.4g, %.4g] | gap %.6g U* %.6g predicted %s' %
                     (s.cell_id, s.trials, s.completed, s.capped, s.errors,
                      s.tau_mean, s.tau_median, s.tau_p95, s.failure_rate,
                      s.failure_ci_low, s.failure_ci_high, s.gap, s.u_star,
                      '-' if s.predicted_stop_time is None
                      else '%d' % s.predicted_stop_time))
    for (instance, delta, epsilon), slope in sorted(slopes.items()):
        lines.append('loglog slope %s|d=%r|e=%r: %.6g' %
                     (instance, delta, epsilon, slope))
    return '\n'.join(lines) + '\n'

def plot_sweeps(summaries, fn):
    """ Mean tau against (gap + epsilon)^-2 on log-log axes, SVG """
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    plt.rcParams['svg.hashsalt'] = 'linbpi'
    fig, ax = plt.subplots(figsize=(5, 4))
    rows = [s for s in summaries if math.isfinite(s.tau_mean)]
    x = [(s.gap + s.epsilon) ** -2 for s in rows]
    ax.loglog(x, [s.tau_mean for s in rows], 'o')
    ax.set_xlabel('(gap + epsilon)^-2')
    ax.set_ylabel('mean stopping time')
    fig.tight_layout()
    fig.savefig(fn, format='svg', metadata={'Date': None})
    plt.close(fig)

def report(summaries, out, trials=None, svg=False, include_timing=False):
    """
    Write <out>.csv (summaries), <out>_trials.csv (when trials are given),
    <out>.txt (plain-text summary with the sweep slopes) and optionally
    <out>.svg. Returns the written file names.
    """
    written = [out + '.csv', out + '.txt']
    summary_frame(summaries).to_csv(out + '.csv', index=False)
    if trials is not None:
        trials_frame(trials, include_timing).to_csv(out + '_trials.csv',
                                                    index=False)
        written.append(out + '_trials.csv')
    with open(out + '.txt', 'w') as fout:
        fout.write(summary_text(summaries, sweep_slopes(summaries)))
    if svg:
        plot_sweeps(summaries, out + '.svg')
        written.append(out + '.svg')
    logger.info('report written: %s', ', '.join(written))
    return written
