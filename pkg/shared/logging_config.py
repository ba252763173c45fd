"""Structured logging configuration for the control lab."""

import logging
import os
import sys
from contextlib import contextmanager
from typing import Iterator

import structlog
from structlog.stdlib import LoggerFactory


def configure_logging(component: str, log_level: str = None) -> None:
    """
    Configure structured logging for a lab process.

    Args:
        component: Name of the running component (e.g., 'control-lab')
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
                   If None, reads from LOG_LEVEL environment variable or defaults to INFO.
    """
    # Get log level from parameter, environment variable, or default to INFO
    if log_level is None:
        log_level = os.getenv("LOG_LEVEL", "INFO")

    # Configure standard library logging
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, log_level.upper()),
        force=True,
    )

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(),
        ],
        context_class=dict,
        logger_factory=LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # Add component name to all logs via context
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(component=component)


def get_logger(name: str = None) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)


@contextmanager
def trial_context(**values) -> Iterator[None]:
    """
    Bind trial identifiers (seed, controller, truth, ...) for every log line
    emitted inside the block, then unbind them.

    Args:
        **values: Context values to attach to log events
    """
    structlog.contextvars.bind_contextvars(**values)
    try:
        yield
    finally:
        structlog.contextvars.unbind_contextvars(*values.keys())
