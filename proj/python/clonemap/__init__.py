from ._clonemap import *  # noqa: F401,F403
from ._clonemap import __doc__  # noqa: F401
