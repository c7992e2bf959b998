from .exceptions import LabError, LabErrorReason, require
from .logger import configure_logging, get_logger
