"""
Observability Module
====================

Structured logging and stage timing for acbound runs.

Features:
- JSON log lines on stderr (one object per record)
- Structured fields passed as keyword arguments
- Stage timing statistics for run manifests
- Function tracing decorator
"""

import json
import logging
import os
import sys
import time
import traceback
from datetime import datetime
from functools import wraps
from typing import Any, Callable, Dict, List, Optional, TypeVar

from dotenv import load_dotenv

F = TypeVar("F", bound=Callable[..., Any])

_RESERVED = frozenset(logging.LogRecord("", 0, "", 0, "", None, None).__dict__) | {"message"}
_configured: set = set()


class JSONFormatter(logging.Formatter):
    """Formats log records as single-line JSON objects"""

    def format(self, record: logging.LogRecord) -> str:
        log_data: Dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                log_data[key] = value

        if record.exc_info and record.exc_info[0] is not None:
            log_data["exception"] = {
                "type": record.exc_info[0].__name__,
                "message": str(record.exc_info[1]),
                "traceback": traceback.format_exception(*record.exc_info),
            }

        return json.dumps(log_data, default=str)


def default_level() -> int:
    load_dotenv()
    name = os.getenv("ACBOUND_LOG_LEVEL", "WARNING").upper()
    return getattr(logging, name, logging.WARNING)


def configure_logging(level: Optional[int | str] = None) -> None:
    """Attach the JSON handler to the package root logger (idempotent)"""
    root = logging.getLogger("acbound")
    if "acbound" not in _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(JSONFormatter())
        root.addHandler(handler)
        root.propagate = False
        _configured.add("acbound")
    if level is None:
        root.setLevel(default_level())
    elif isinstance(level, str):
        root.setLevel(getattr(logging, level.upper(), logging.WARNING))
    else:
        root.setLevel(level)


class StructuredLogger:
    """Logger wrapper that takes structured fields as keyword arguments"""

    def __init__(self, name: str):
        if not name.startswith("acbound"):
            name = f"acbound.{name}"
        self.logger = logging.getLogger(name)
        if "acbound" not in _configured:
            configure_logging()

    def log(self, level: str, message: str, exc_info: bool = False, **fields: Any) -> None:
        self.logger.log(
            getattr(logging, level.upper(), logging.INFO),
            message,
            extra=fields,
            exc_info=exc_info,
        )

    def debug(self, message: str, **fields: Any) -> None:
        self.log("DEBUG", message, **fields)

    def info(self, message: str, **fields: Any) -> None:
        self.log("INFO", message, **fields)

    def warning(self, message: str, **fields: Any) -> None:
        self.log("WARNING", message, **fields)

    def error(self, message: str, **fields: Any) -> None:
        self.log("ERROR", message, **fields)

    def critical(self, message: str, **fields: Any) -> None:
        self.log("CRITICAL", message, **fields)


def get_logger(name: str) -> StructuredLogger:
    return StructuredLogger(name)


class PerformanceMonitor:
    """Collects wall-clock durations per stage"""

    def __init__(self):
        self.durations: Dict[str, List[float]] = {}
        self.logger = StructuredLogger("performance")

    def record(self, stage: str, seconds: float) -> None:
        self.durations.setdefault(stage, []).append(seconds)
        self.logger.debug("Stage timed", stage=stage, duration_seconds=seconds)

    def get_stats(self, stage: str) -> Dict[str, float]:
        values = sorted(self.durations.get(stage, []))
        if not values:
            return {}
        count = len(values)
        return {
            "count": count,
            "min": values[0],
            "max": values[-1],
            "mean": sum(values) / count,
            "median": values[count // 2],
            "p95": values[min(count - 1, int(count * 0.95))],
            "p99": values[min(count - 1, int(count * 0.99))],
        }

    def get_all_stats(self) -> Dict[str, Dict[str, float]]:
        return {stage: self.get_stats(stage) for stage in self.durations}

    def timed(self, stage: str) -> "_StageTimer":
        return _StageTimer(self, stage)


class _StageTimer:
    def __init__(self, monitor: PerformanceMonitor, stage: str):
        self.monitor = monitor
        self.stage = stage
        self.start = 0.0

    def __enter__(self) -> "_StageTimer":
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc: object) -> None:
        self.monitor.record(self.stage, time.perf_counter() - self.start)


def trace_function(category: str) -> Callable[[F], F]:
    """Decorator logging start, completion and failure of a call"""

    def decorator(func: F) -> F:
        logger = StructuredLogger(func.__module__)

        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            start_time = time.perf_counter()
            logger.debug(f"{category} started", function=func.__name__)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.error(
                    f"{category} failed",
                    function=func.__name__,
                    duration_ms=(time.perf_counter() - start_time) * 1e3,
                    error=str(e),
                    error_type=type(e).__name__,
                )
                raise
            logger.info(
                f"{category} completed",
                function=func.__name__,
                duration_ms=(time.perf_counter() - start_time) * 1e3,
            )
            return result

        return wrapper  # type: ignore[return-value]

    return decorator
