"""Utility functions for jd-bss."""

from .helpers import *  # noqa: F403
from .logger import *  # noqa: F403
from .stftio import *  # noqa: F403
