#!/usr/bin/env python3
"""
Logging setup shared by the CLI
Status lines look like "[INFO] ..." / "[ERROR] ..." and go through tqdm.write
so they never break an active progress bar
"""

import logging

from tqdm import tqdm


class TqdmHandler(logging.Handler):
    """Stream handler that writes through tqdm"""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record))
        except Exception:
            self.handleError(record)


def configure_logging(verbosity: int = 0, quiet: bool = False) -> None:
    """Install the bracketed status-line handler on the root logger

    Args:
        verbosity: 0 -> INFO, 1+ -> DEBUG
        quiet: only warnings and errors
    """
    if quiet:
        level = logging.WARNING
    elif verbosity > 0:
        level = logging.DEBUG
    else:
        level = logging.INFO

    handler = TqdmHandler()
    handler.setFormatter(logging.Formatter('[%(levelname)s] %(message)s'))

    root = logging.getLogger()
    for existing in list(root.handlers):
        if isinstance(existing, TqdmHandler):
            root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)
