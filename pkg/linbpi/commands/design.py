import sys

import pandas as pd

from linbpi import default_arg_parser, LinBpiError
from linbpi.logging import logger
from linbpi.mdp import load_instance, pair_of_index
from linbpi.design import g_optimal_design, log_det_of_design, DEFAULT_EPS_G

def main(argv=None):
    min_args = 1
    max_args = 1

    usage = 'usage: linbpi design [options] INSTANCE'
    description = 'Compute an approximate G-optimal design over the ' \
                  'state-action pairs of INSTANCE (file or bundled name)'
    parser = default_arg_parser(usage, description)

    parser.add_option('--eps-g', dest='eps_g', metavar='FLOAT',
                      type='float', default=DEFAULT_EPS_G,
                      help='Relative slack of the design certificate. '\
                           'Default: %g' % DEFAULT_EPS_G)

    parser.add_option('--csv', dest='csv', metavar='FILE', default=None,
                      help='Write the design weights to FILE')

    (options, args) = parser.parse_args(argv)
    logger.setLevel(options.verbose)

    nba = len(args)
    if nba < min_args or (max_args >= 0 and nba > max_args):
        parser.print_help()
        sys.exit(1)

    try:
        mdp = load_instance(args[0])
        design = g_optimal_design(mdp.features, options.eps_g)
    except LinBpiError as e:
        logger.error(str(e))
        sys.exit(1)

    features = mdp.features
    print('d = %d, sigma = %.6f (bound %.6f), log det = %.6f, '
          'support = %d, iterations = %d' %
          (features.dim, design.sigma, (1 + options.eps_g) * features.dim,
           log_det_of_design(design, features), len(design.support),
           design.iterations))
    rows = []
    for i in design.support:
        s, a = pair_of_index(features, i)
        rows.append({'state': s, 'action': a,
                     'weight': float(design.weights[i])})
        print('  (s=%d, a=%d): %.6f' % (s, a, design.weights[i]))
    if options.csv is not None:
        pd.DataFrame(rows, columns=['state', 'action', 'weight']) \
          .to_csv(options.csv, index=False)
