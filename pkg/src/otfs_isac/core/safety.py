"""Locked atomic writes for simulation artifacts and stage timing."""
import logging
import os
import shutil
import tempfile
import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Optional, Union

from filelock import FileLock

logger = logging.getLogger(__name__)


class SafeFileOperation:
    """Context manager for writing an artifact (model, dataset, report).

    Holds an inter-process lock on ``<path>.lock`` while the new content is
    written to a temporary sibling file and atomically moved into place. If
    the block raises, the previous file is restored from its backup.
    """

    def __init__(
        self, file_path: Union[str, Path], timeout: int = 30, create_backup: bool = True
    ):
        """Initialize safe file operation.

        Args:
            file_path: Artifact path
            timeout: Lock timeout in seconds
            create_backup: Whether to back up an existing artifact first
        """
        self.file_path = Path(file_path)
        self.timeout = timeout
        self.create_backup = create_backup
        self.lock_path = Path(f"{self.file_path}.lock")
        self.backup_path = Path(f"{self.file_path}.backup.{time.time_ns()}")
        self.temp_path: Optional[Path] = None
        self.lock: Optional[FileLock] = None
        self._operation_log: list[dict[str, Any]] = []

    def __enter__(self) -> "SafeFileOperation":
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        self.lock = FileLock(self.lock_path, timeout=self.timeout)

        try:
            self.lock.acquire()
            logger.debug(f"Acquired lock for {self.file_path}")

            if self.create_backup and self.file_path.exists():
                shutil.copy2(self.file_path, self.backup_path)
                self._log_operation("backup_created", str(self.backup_path))

            return self

        except Exception as e:
            logger.error(f"Failed to acquire lock for {self.file_path}: {e}")
            if self.lock:
                self.lock.release()
            raise

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        try:
            if exc_type is not None:
                logger.error(f"Write of {self.file_path} failed: {exc_val}")
                self._restore_from_backup()
            elif self.backup_path.exists():
                os.remove(self.backup_path)
                self._log_operation("backup_removed", "success")

        finally:
            if self.temp_path and self.temp_path.exists():
                os.remove(self.temp_path)

            if self.lock:
                self.lock.release()
                logger.debug(f"Released lock for {self.file_path}")

    def _restore_from_backup(self) -> None:
        if self.backup_path.exists():
            shutil.move(self.backup_path, self.file_path)
            logger.info(f"Restored {self.file_path} from backup")
            self._log_operation("restored_from_backup", str(self.backup_path))

    def _log_operation(self, operation: str, details: str) -> None:
        self._operation_log.append(
            {"timestamp": time.time(), "operation": operation, "details": details}
        )

    def get_temp_file(self) -> Path:
        """Temporary file in the artifact's directory."""
        if self.temp_path is None:
            with tempfile.NamedTemporaryFile(
                dir=self.file_path.parent,
                prefix=f".{self.file_path.name}.",
                suffix=".tmp",
                delete=False,
            ) as tmp:
                self.temp_path = Path(tmp.name)

        return self.temp_path

    def atomic_replace(self, source: Union[str, Path]) -> None:
        """Atomically move ``source`` onto the artifact path."""
        source = Path(source)
        if not source.exists():
            raise FileNotFoundError(f"Source file not found: {source}")

        os.replace(source, self.file_path)
        self._log_operation("atomic_replace", f"{source} -> {self.file_path}")

    def get_operation_log(self) -> list[dict[str, Any]]:
        return self._operation_log.copy()


@contextmanager
def safe_write_context(
    file_path: Union[str, Path], timeout: int = 30
) -> Iterator[SafeFileOperation]:
    """Context manager yielding a :class:`SafeFileOperation`."""
    with SafeFileOperation(file_path, timeout) as safe_op:
        yield safe_op


def safe_write_bytes(
    file_path: Union[str, Path], data: bytes, timeout: int = 30
) -> Path:
    """Write ``data`` to ``file_path`` under lock with an atomic replace."""
    file_path = Path(file_path)
    with safe_write_context(file_path, timeout) as safe_op:
        temp_file = safe_op.get_temp_file()
        temp_file.write_bytes(data)
        safe_op.atomic_replace(temp_file)
    logger.info(f"Wrote {len(data)} bytes to {file_path}")
    return file_path


def safe_write_text(file_path: Union[str, Path], text: str, timeout: int = 30) -> Path:
    """UTF-8, LF-terminated variant of :func:`safe_write_bytes`."""
    return safe_write_bytes(file_path, text.encode("utf-8"), timeout)


class PerformanceMonitor:
    """Count and time named operations.

    Used both as a stage timer for experiment runs and as the application
    counter of channel operators.
    """

    def __init__(self) -> None:
        self.metrics: dict[str, dict[str, float]] = {}

    @contextmanager
    def measure_operation(self, operation_name: str) -> Iterator[None]:
        start_time = time.perf_counter()
        try:
            yield
        finally:
            duration = time.perf_counter() - start_time
            self._record_metric(operation_name, duration)

    def _record_metric(self, operation: str, duration: float) -> None:
        if operation not in self.metrics:
            self.metrics[operation] = {
                "count": 0,
                "total_time": 0.0,
                "min_time": float("inf"),
                "max_time": 0.0,
            }

        metrics = self.metrics[operation]
        metrics["count"] += 1
        metrics["total_time"] += duration
        metrics["min_time"] = min(metrics["min_time"], duration)
        metrics["max_time"] = max(metrics["max_time"], duration)

    def count(self, operation: str) -> int:
        """Number of recorded calls of ``operation``."""
        return int(self.metrics.get(operation, {}).get("count", 0))

    def get_stats(self, operation: str) -> dict[str, float]:
        if operation not in self.metrics:
            return {}

        metrics = self.metrics[operation]
        return {
            "count": metrics["count"],
            "total_time": metrics["total_time"],
            "average_time": metrics["total_time"] / metrics["count"],
            "min_time": metrics["min_time"],
            "max_time": metrics["max_time"],
        }

    def get_all_stats(self) -> dict[str, dict[str, float]]:
        return {op: self.get_stats(op) for op in self.metrics}

    def reset(self) -> None:
        self.metrics.clear()

    def log_summary(self, level: int = logging.INFO) -> None:
        for operation, stats in sorted(self.get_all_stats().items()):
            logger.log(
                level,
                f"{operation}: {int(stats['count'])} calls, "
                f"{stats['total_time']:.3f}s total, "
                f"{stats['average_time'] * 1e3:.2f}ms average",
            )


# Global stage timer for experiment runs
performance_monitor = PerformanceMonitor()
