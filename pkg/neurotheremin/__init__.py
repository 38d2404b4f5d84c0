"""For having the version."""

import logging
from importlib.metadata import version, PackageNotFoundError

try:
    __version__ = version("neurotheremin")
except PackageNotFoundError:  # running from a source checkout
    __version__ = '0.1.0'

logging.getLogger(__name__).addHandler(logging.NullHandler())
