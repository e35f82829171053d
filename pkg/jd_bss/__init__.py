"""jd-bss: Multichannel blind source separation with FCA, FastFCA and FastMNMF."""

from jd_bss.core.separator import Separator
from jd_bss.managers.estimator_manager import EstimatorManager
from jd_bss.managers.storage_manager import StorageManager
from jd_bss.utils.helpers import load_config
from jd_bss.utils.logger import setup_logger

__version__ = "0.1.0"
__all__ = [
    "Separator",
    "EstimatorManager",
    "StorageManager",
    "setup_logger",
    "load_config",
]
