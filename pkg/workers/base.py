from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Any, List, Optional
import logging
from core.config import settings
from datetime import datetime, timezone

logger = logging.getLogger(__name__)


class BaseWorker(ABC):
    def __init__(self, queue_name: str, max_retries: Optional[int] = None, threads: Optional[int] = None):
        """
        Initialize the worker for a named batch of jobs.

        Args:
            queue_name: Label used in logs and dead-letter records
            max_retries: Retry attempts per job before it is dead-lettered
            threads: Requested concurrency, capped at LRSEG_THREADS
        """
        self.queue_name = queue_name
        self.max_retries = settings.WORKER_MAX_RETRIES if max_retries is None else max_retries
        self.threads = settings.LRSEG_THREADS if threads is None else min(settings.LRSEG_THREADS, max(1, threads))
        self.dead_letters: List[Dict[str, Any]] = []

    def process_message(self, job_data: Dict[str, Any]) -> Any:
        """Run one job with retries; a job that keeps failing is dead-lettered and its error re-raised."""
        retry_count = 0
        first_failure_time = None
        while True:
            try:
                result = self.process(job_data)
                logger.debug(f"Processed job from {self.queue_name}: {self.describe(job_data)}")
                return result
            except Exception as e:
                now = datetime.now(timezone.utc).isoformat()
                first_failure_time = first_failure_time or now
                if retry_count < self.max_retries:
                    retry_count += 1
                    logger.warning(
                        f"Retrying {self.describe(job_data)} on {self.queue_name} "
                        f"(attempt {retry_count}/{self.max_retries}): {str(e)}"
                    )
                    continue
                logger.error(f"Max retries ({self.max_retries}) reached for {self.describe(job_data)}: {str(e)}")
                self.dead_letters.append({
                    "job": self.describe(job_data),
                    "x-first-failure-time": first_failure_time,
                    "x-final-failure-time": now,
                    "x-final-error": str(e)[:500],  # Truncate long error messages
                    "x-total-retries": retry_count,
                })
                raise

    @abstractmethod
    def process(self, job_data: Dict[str, Any]) -> Any:
        """
        Process a single job.
        This method should be implemented by concrete worker classes.

        Args:
            job_data: The job description
        """
        pass

    def describe(self, job_data: Dict[str, Any]) -> str:
        return str(job_data.get("image_id", job_data))

    def run(self, jobs: List[Dict[str, Any]]) -> List[Any]:
        """
        Process every job, at most ``threads`` at a time.

        Results come back in job order. When any job is dead-lettered the
        first failure (in job order) is raised after all jobs finished.
        """
        self.dead_letters = []
        logger.info(f"Processing {len(jobs)} jobs on {self.queue_name} with {self.threads} thread(s)")
        if self.threads == 1:
            outcomes = [self._capture(job) for job in jobs]
        else:
            with ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix=self.queue_name) as pool:
                outcomes = list(pool.map(self._capture, jobs))

        for ok, value in outcomes:
            if not ok:
                logger.error(f"{len(self.dead_letters)} job(s) moved to the dead letters of {self.queue_name}")
                raise value
        return [value for _, value in outcomes]

    def _capture(self, job_data: Dict[str, Any]):
        try:
            return True, self.process_message(job_data)
        except Exception as e:
            return False, e
