from .version import __version__
from ._linbpi import *
