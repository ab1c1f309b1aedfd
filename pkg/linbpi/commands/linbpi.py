import sys

from linbpi import __version__
from linbpi.commands import design, solve, run, bench, oracles

SUBCOMMANDS = {
    'design': (design.main, 'G-optimal design of an instance'),
    'solve': (solve.main, 'exact solution, gap and complexity bounds'),
    'run': (run.main, 'repeated GSS / GSS-E trials on one instance'),
    'bench': (bench.main, 'run a benchmark plan and write reports'),
    'oracles': (oracles.main, 'run the lemma check battery'),
}

def print_usage():
    print('usage: linbpi SUBCOMMAND [options] [args]\n')
    print('Subcommands:')
    for name, (cmd, help_msg) in SUBCOMMANDS.items():
        print('  %-10s %s' % (name, help_msg))
    print('\nRun "linbpi SUBCOMMAND --help" for the options of a subcommand.')

def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    if len(argv) > 0 and argv[0] == '--version':
        print('linbpi %s' % __version__)
        return
    if len(argv) == 0 or argv[0] not in SUBCOMMANDS:
        print_usage()
        sys.exit(1)
    cmd, help_msg = SUBCOMMANDS[argv[0]]
    cmd(argv[1:])
