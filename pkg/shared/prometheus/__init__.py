"""Prometheus shared helpers."""

from .error_metrics import record_error, register_error_metrics, write_metrics_textfile  # noqa: F401
