"""
Progress tracking for request batches
"""
import logging
import threading
import time
from enum import Enum
from typing import Dict, Optional

logger = logging.getLogger(__name__)


class ProgressStatus(Enum):
    PENDING = "pending"
    PROCESSING = "processing"
    COMPLETED = "completed"
    ERROR = "error"


class ProgressTracker:
    def __init__(self, log_every: int = 25):
        self._progress: Dict[str, Dict] = {}
        self._lock = threading.Lock()
        self._log_every = max(1, log_every)

    def start_batch(self, batch_id: str, total_jobs: int) -> None:
        """Start tracking a new batch"""
        with self._lock:
            self._progress[batch_id] = {
                "status": ProgressStatus.PENDING.value,
                "total_jobs": total_jobs,
                "in_flight": 0,
                "peak_in_flight": 0,
                "completed": 0,
                "failed": 0,
                "percentage": 0.0 if total_jobs else 100.0,
                "start_time": time.time(),
            }
        logger.info("Batch %s: %d job(s) queued", batch_id, total_jobs)

    def job_started(self, batch_id: str) -> None:
        with self._lock:
            progress = self._progress.get(batch_id)
            if progress is None:
                return
            progress["status"] = ProgressStatus.PROCESSING.value
            progress["in_flight"] += 1
            progress["peak_in_flight"] = max(progress["peak_in_flight"], progress["in_flight"])

    def job_finished(self, batch_id: str, failed: bool = False) -> None:
        with self._lock:
            progress = self._progress.get(batch_id)
            if progress is None:
                return
            progress["in_flight"] -= 1
            progress["failed" if failed else "completed"] += 1
            done = progress["completed"] + progress["failed"]
            progress["percentage"] = min(100.0, done / progress["total_jobs"] * 100) if progress["total_jobs"] else 100.0
            if done % self._log_every == 0 and done < progress["total_jobs"]:
                logger.info("Batch %s: %d/%d done", batch_id, done, progress["total_jobs"])

    def finish_batch(self, batch_id: str) -> None:
        with self._lock:
            progress = self._progress.get(batch_id)
            if progress is None:
                return
            progress["status"] = ProgressStatus.ERROR.value if progress["failed"] else ProgressStatus.COMPLETED.value
            progress["end_time"] = time.time()
            elapsed = progress["end_time"] - progress["start_time"]
            completed, failed = progress["completed"], progress["failed"]
        logger.info("Batch %s finished: %d ok, %d failed in %.1fs", batch_id, completed, failed, elapsed)

    def get_progress(self, batch_id: str) -> Optional[Dict]:
        """Snapshot of a batch's counters"""
        with self._lock:
            progress = self._progress.get(batch_id)
            return dict(progress) if progress else None


# Global progress tracker instance
progress_tracker = ProgressTracker()
