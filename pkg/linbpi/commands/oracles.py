import sys

import numpy as np

from linbpi import default_arg_parser, LinBpiError
from linbpi.logging import logger
from linbpi.oracles import run_battery

def main(argv=None):
    min_args = 0
    max_args = 0

    usage = 'usage: linbpi oracles [options]'
    description = 'Check the bound lemmas over randomized instance suites. ' \
                  'Exits with status 1 on any violation.'
    parser = default_arg_parser(usage, description)

    parser.add_option('-s', '--seed', dest='seed', metavar='INT',
                      type='int', default=0,
                      help='Seed of the instance suites. Default: 0')

    parser.add_option('-q', '--quick', dest='quick', action='store_true',
                      default=False,
                      help='Ten times smaller suites')

    (options, args) = parser.parse_args(argv)
    logger.setLevel(options.verbose)

    nba = len(args)
    if nba < min_args or (max_args >= 0 and nba > max_args):
        parser.print_help()
        sys.exit(1)

    try:
        lines = run_battery(np.random.default_rng(options.seed),
                            quick=options.quick)
    except LinBpiError as e:
        logger.error(str(e))
        sys.exit(1)

    print('%-24s %10s %10s %14s' % ('lemma', 'instances', 'violations',
                                    'worst margin'))
    for line in lines:
        print('%-24s %10d %10d %14.6g' % line)
    if any(line.violations > 0 for line in lines):
        sys.exit(1)
