# utils/logger.py
import logging

from rich.console import Console
from rich.logging import RichHandler

import settings

console = Console(stderr=True)

_configured = False


def configure_logging(level: str = None) -> None:
    global _configured
    if _configured:
        return
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
    )
    _configured = True


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(f"compass_lab.{name}")
