from __future__ import annotations

from typing import Iterable

from prometheus_client import REGISTRY, CollectorRegistry, Counter, write_to_textfile

ERRORS_TOTAL = Counter(
    "lab_errors_total",
    "Errors surfaced to the command line, grouped by command and exit category",
    ["command", "category"],
)

_registered = False


def register_error_metrics(
    commands: Iterable[str] | None = None,
    categories: Iterable[str] | None = None,
) -> None:
    global _registered
    if _registered:
        return
    _registered = True

    command_values = tuple(commands or ("run", "sweep", "compare-estimators", "check"))
    category_values = tuple(categories or ("config", "numerical", "io", "check_failed", "all_diverged"))
    for command in command_values:
        for category in category_values:
            ERRORS_TOTAL.labels(command=command, category=category)


def record_error(command: str, category: str) -> None:
    ERRORS_TOTAL.labels(command=command or "", category=category or "").inc()


def write_metrics_textfile(path: str, registry: CollectorRegistry | None = None) -> None:
    """Dump the registry in node-exporter textfile format (batch jobs have no scrape endpoint)."""
    write_to_textfile(path, registry or REGISTRY)
