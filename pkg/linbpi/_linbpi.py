import os
import sys
from optparse import OptionParser
if sys.version_info < (3, 9):
    import importlib_resources
else:
    import importlib.resources as importlib_resources

from .version import __version__

__all__ = ['default_arg_parser', 'default_run_arg_parser', 'worker_count',
           'data_path', 'LinBpiError', 'InstanceError', 'ConfigurationError',
           'SingularDesign', 'ConvergenceError', 'DegenerateGap',
           'AbsoluteContinuityViolated', 'ResampleBudgetExceeded']

WORKERS_ENV = 'LINBPI_WORKERS'


class LinBpiError(Exception):
    pass

class InstanceError(LinBpiError, ValueError):
    pass

class ConfigurationError(LinBpiError, ValueError):
    pass

class SingularDesign(LinBpiError):
    pass

class ConvergenceError(LinBpiError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved

class DegenerateGap(LinBpiError, ZeroDivisionError):
    pass

class AbsoluteContinuityViolated(LinBpiError):
    pass

class ResampleBudgetExceeded(LinBpiError):
    pass


def default_arg_parser(usage, description):
    parser = OptionParser(usage=usage, description=description,
                          version='%%prog %s' % __version__)

    parser.add_option('-v', '--verbose', dest='verbose',
                      metavar='VERBOSELEVEL',
                      type='int', default=0,
                      help='Verbose level: '\
                           '0 (NOTSET: quiet, default), '\
                           '50 (CRITICAL), ' \
                           '40 (ERROR), ' \
                           '30 (WARNING), '\
                           '20 (INFO), '\
                           '10 (DEBUG), '\
                           '9 (DEBUG2: stopping checks), '\
                           '8 (DEBUG3: inner iterations)')

    return parser

def default_run_arg_parser(usage, description):
    parser = default_arg_parser(usage, description)

    parser.add_option('-d', '--delta', dest='delta', metavar='FLOAT',
                      type='float', default=0.1,
                      help='Confidence level delta in (0,1). Default: 0.1')

    parser.add_option('-e', '--epsilon', dest='epsilon', metavar='FLOAT',
                      type='float', default=0.0,
                      help='PAC slack epsilon >= 0. Default: 0')

    parser.add_option('-s', '--seed', dest='seed', metavar='INT',
                      type='int', default=0,
                      help='Master seed. Default: 0')

    parser.add_option('--stride', dest='stride', metavar='INT',
                      type='int', default=1,
                      help='Rounds between stopping checks. Default: 1')

    parser.add_option('--eps-g', dest='eps_g', metavar='FLOAT',
                      type='float', default=0.01,
                      help='Relative slack of the G-optimal design. '\
                           'Default: 0.01')

    parser.add_option('--t-max', dest='t_max', metavar='INT',
                      type='int', default=None,
                      help='Round cap. Default: 4x the predicted stop time')

    return parser


def worker_count(default=1):
    """ Worker count, overridden by the LINBPI_WORKERS environment variable """
    value = os.environ.get(WORKERS_ENV)
    if value is None or value.strip() == '':
        return default
    try:
        workers = int(value)
    except ValueError:
        raise ConfigurationError('%s must be an integer, got %r' %
                                 (WORKERS_ENV, value))
    if workers < 1:
        raise ConfigurationError('%s must be >= 1, got %d' %
                                 (WORKERS_ENV, workers))
    return workers


def data_path(fn):
    """ Path of a file bundled in linbpi/data """
    return importlib_resources.files('linbpi').joinpath('data', fn)
