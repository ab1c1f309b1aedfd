import sys

import numpy as np

from linbpi import default_arg_parser, LinBpiError
from linbpi.logging import logger
from linbpi.mdp import load_instance, solve, is_episodic
from linbpi.gss import (u_star, predicted_stop_time, lower_bound_reference,
                        warmup_time)

def main(argv=None):
    min_args = 1
    max_args = 1

    usage = 'usage: linbpi solve [options] INSTANCE'
    description = 'Solve INSTANCE exactly and print V*, pi*, the gap, ' \
                  'U*(M) and the predicted stopping time'
    parser = default_arg_parser(usage, description)

    parser.add_option('-d', '--delta', dest='delta', metavar='FLOAT',
                      type='float', default=0.1,
                      help='Confidence level delta. Default: 0.1')

    parser.add_option('-e', '--epsilon', dest='epsilon', metavar='FLOAT',
                      type='float', default=0.0,
                      help='PAC slack epsilon. Default: 0')

    (options, args) = parser.parse_args(argv)
    logger.setLevel(options.verbose)

    nba = len(args)
    if nba < min_args or (max_args >= 0 and nba > max_args):
        parser.print_help()
        sys.exit(1)

    try:
        mdp = load_instance(args[0])
        solution = solve(mdp)
        u = u_star(mdp, solution.gap, options.epsilon)
        horizon = mdp.horizon if is_episodic(mdp) else None
        predicted = predicted_stop_time(u, options.delta, mdp.features.dim,
                                        horizon)
    except (LinBpiError, ValueError) as e:
        logger.error(str(e))
        sys.exit(1)

    with np.printoptions(precision=6, suppress=True):
        print('V* =\n%s' % np.asarray(solution.V))
        print('pi* =\n%s' % np.asarray(solution.policy))
    print('gap = %.6g' % solution.gap)
    print('U*(M) = %.6g' % u)
    print('U*(M) kl(delta, 1-delta) = %.6g' %
          lower_bound_reference(u, options.delta))
    print('predicted stopping time = %d' % predicted)
    print('design warm-up time T1 = %.6g' % warmup_time(mdp.features.dim))
