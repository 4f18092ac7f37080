"""Elastic process groups: scale-out/scale-in decisions and the benchmark harness."""

import os
import shutil

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401


def worker_path():
    """Path of the eg_worker executable: $EG_WORKER, the copy shipped in this package, or PATH."""
    env = os.environ.get("EG_WORKER")
    if env:
        return env
    bundled = os.path.join(os.path.dirname(__file__), "eg_worker")
    if os.access(bundled, os.X_OK):
        return bundled
    return shutil.which("eg_worker")
