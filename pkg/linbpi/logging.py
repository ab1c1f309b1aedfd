import sys
import logging

logger = logging.getLogger('linbpi')
console_handler = logging.StreamHandler(stream=sys.stdout)
fmt = '%(name)s | %(asctime)s %(levelname)-8s  %(message)s'
console_handler.setFormatter(logging.Formatter(fmt=fmt,
                                               datefmt='%Y-%m-%d %H:%M:%S'))
logger.addHandler(console_handler)

DEBUG_LEVEL2_NUM = 9    # stopping-rule checks: t, Z(t), threshold
DEBUG_LEVEL3_NUM = 8    # Frank-Wolfe steps, value iteration sweeps

def _register_level(num, name):
    logging.addLevelName(num, name)
    def log_at_level(self, message, *args, **kws):
        if self.isEnabledFor(num):
            # logger takes its '*args' as 'args'
            self._log(num, message, args, **kws)
    setattr(logging.Logger, name.lower(), log_at_level)

_register_level(DEBUG_LEVEL2_NUM, 'DEBUG2')
_register_level(DEBUG_LEVEL3_NUM, 'DEBUG3')
