import sys

from linbpi import default_run_arg_parser, worker_count, LinBpiError
from linbpi.logging import logger
from linbpi.harness import (make_plan, run_plan, run_frame, trace_frame,
                            summary_text, sweep_slopes)

def main(argv=None):
    min_args = 0
    max_args = 1

    usage = 'usage: linbpi run [options] [--instance FILE | INSTANCE]'
    description = 'Run repeated GSS (discounted) or GSS-E (episodic) ' \
                  'identification trials on an instance file or a bundled ' \
                  'instance name'
    parser = default_run_arg_parser(usage, description)

    parser.add_option('-i', '--instance', dest='instance', metavar='FILE',
                      default=None,
                      help='Instance JSON file or bundled instance name')

    parser.add_option('-n', '--trials', dest='trials', metavar='INT',
                      type='int', default=1,
                      help='Number of trials. Default: 1')

    parser.add_option('-o', '--out', dest='out', metavar='CSV', default=None,
                      help='Write one row per trial to CSV')

    parser.add_option('--trace', dest='trace', metavar='CSV', default=None,
                      help='Write the per-check Z(t), threshold and '\
                           'estimation diagnostics of every trial to CSV')

    (options, args) = parser.parse_args(argv)
    logger.setLevel(options.verbose)

    nba = len(args)
    if nba < min_args or (max_args >= 0 and nba > max_args) or \
       (nba == 0) == (options.instance is None):
        parser.print_help()
        sys.exit(1)
    instance = options.instance if options.instance is not None else args[0]

    try:
        plan = make_plan([{'instance': instance, 'deltas': [options.delta],
                           'epsilons': [options.epsilon],
                           'trials': options.trials}],
                         master_seed=options.seed, stride=options.stride,
                         eps_g=options.eps_g, t_max=options.t_max)
        result = run_plan(plan, worker_count(),
                          trace=options.trace is not None)
    except LinBpiError as e:
        logger.error(str(e))
        sys.exit(1)

    if options.out is not None:
        run_frame(result).to_csv(options.out, index=False)
    if options.trace is not None:
        trace_frame(result.trials).to_csv(options.trace, index=False)
    for row in result.trials:
        if row.record is None:
            print('trial %d: error %s' % (row.trial, row.error))
        else:
            print('trial %d: tau = %d, correct = %s, capped = %s' %
                  (row.trial, row.record.tau, row.record.correct,
                   row.record.capped))
    sys.stdout.write(summary_text(result.summaries,
                                  sweep_slopes(result.summaries)))
