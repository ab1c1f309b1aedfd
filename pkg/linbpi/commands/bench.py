import sys

from linbpi import default_arg_parser, worker_count, LinBpiError
from linbpi.logging import logger
from linbpi.harness import (load_plan, run_plan, report, summary_text,
                            sweep_slopes, acceptance_failures)

def main(argv=None):
    min_args = 1
    max_args = 1

    usage = 'usage: linbpi bench [options] PLAN'
    description = 'Run the benchmark PLAN (JSON file or bundled plan name, ' \
                  'e.g. default_plan) and write CSV / text / SVG reports. ' \
                  'Exits with status 1 when a cell fails its PAC check.'
    parser = default_arg_parser(usage, description)

    parser.add_option('-w', '--workers', dest='workers', metavar='INT',
                      type='int', default=None,
                      help='Number of worker processes. '\
                           'Default: $LINBPI_WORKERS or 1')

    parser.add_option('-o', '--out', dest='out', metavar='PREFIX',
                      default='bench',
                      help='Prefix of the report files. Default: bench')

    parser.add_option('--svg', dest='svg', action='store_true',
                      default=False,
                      help='Also write PREFIX.svg')

    parser.add_option('--timing', dest='timing', action='store_true',
                      default=False,
                      help='Include wall-clock times in the trial CSV')

    (options, args) = parser.parse_args(argv)
    logger.setLevel(options.verbose)

    nba = len(args)
    if nba < min_args or (max_args >= 0 and nba > max_args):
        parser.print_help()
        sys.exit(1)

    try:
        workers = options.workers
        if workers is None:
            workers = worker_count()
        plan = load_plan(args[0])
        result = run_plan(plan, workers)
        report(result.summaries, options.out, trials=result.trials,
               svg=options.svg, include_timing=options.timing)
    except LinBpiError as e:
        logger.error(str(e))
        sys.exit(1)

    sys.stdout.write(summary_text(result.summaries,
                                  sweep_slopes(result.summaries)))
    failed = acceptance_failures(result.summaries)
    if failed:
        logger.error('PAC check failed for: %s', ', '.join(failed))
        sys.exit(1)
