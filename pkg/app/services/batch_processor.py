"""
Bounded task pool for experiment work items
Queue-based worker threads; results are keyed and returned in key order so that
aggregation never depends on scheduling
"""

from dataclasses import dataclass
from enum import Enum
from queue import Queue
from threading import Lock, Thread
from typing import Any, Callable, Dict, Hashable, Iterable, List, Optional, Tuple

from ..errors import RfsError
from ..monitoring import get_error_reporter, get_logger


class JobStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class TaskJob:
    """Single unit of work in the pool"""
    key: Hashable
    func: Callable[[], Any]
    status: JobStatus = JobStatus.PENDING
    result: Any = None
    error: Optional[BaseException] = None


class TaskFailedError(RfsError):
    """A pool task raised something that is not an RfsError"""


class TaskPool:
    """Runs keyed callables on a bounded set of worker threads"""

    def __init__(self, max_workers: Optional[int] = None, name: str = 'pool'):
        from ..settings import settings

        self.logger = get_logger('task_pool')
        self.max_workers = max(1, int(max_workers or settings.workers))
        self.name = name
        self.jobs: Dict[Hashable, TaskJob] = {}
        self.totals: Dict[str, int] = {status.value: 0 for status in JobStatus}
        self.jobs_lock = Lock()

    def run(self, tasks: Iterable[Tuple[Hashable, Callable[[], Any]]]) -> List[Tuple[Hashable, Any]]:
        """
        Execute every task and return [(key, result)] sorted by key

        Raises:
            The error of the failing task with the smallest key, carrying the key as context.
            Every failure is recorded in the error reporter first.
        """
        jobs = [TaskJob(key=key, func=func) for key, func in tasks]
        with self.jobs_lock:
            self.jobs = {}
            for job in jobs:
                if job.key in self.jobs:
                    raise ValueError(f"Duplicate task key {job.key!r}")
                self.jobs[job.key] = job

        if not jobs:
            return []

        self.logger.info("Task pool started", pool=self.name, tasks=len(jobs),
                         workers=min(self.max_workers, len(jobs)))

        if self.max_workers == 1 or len(jobs) == 1:
            for job in jobs:
                self._process_job(job)
        else:
            job_queue: Queue = Queue()
            for job in jobs:
                job_queue.put(job)
            workers = []
            for i in range(min(self.max_workers, len(jobs))):
                job_queue.put(None)
                worker = Thread(target=self._worker_loop, args=(job_queue,),
                                name=f"{self.name}-worker-{i}", daemon=True)
                worker.start()
                workers.append(worker)
            for worker in workers:
                worker.join()

        ordered = sorted(jobs, key=lambda j: j.key)
        failed = [job for job in ordered if job.status is JobStatus.FAILED]
        with self.jobs_lock:
            for job in ordered:
                self.totals[job.status.value] += 1
        self.logger.info("Task pool finished", pool=self.name,
                         completed=len(ordered) - len(failed), failed=len(failed))
        if failed:
            raise self._wrap(failed[0])
        return [(job.key, job.result) for job in ordered]

    def map(self, func: Callable[[Any], Any], keys: Iterable[Hashable]) -> List[Tuple[Hashable, Any]]:
        """run() with func(key) as the task for each key"""
        return self.run((key, (lambda k=key: func(k))) for key in keys)

    def _worker_loop(self, job_queue: Queue):
        while True:
            job = job_queue.get()
            if job is None:
                break
            self._process_job(job)

    def _process_job(self, job: TaskJob):
        with self.jobs_lock:
            job.status = JobStatus.RUNNING
        try:
            result = job.func()
        except Exception as e:
            with self.jobs_lock:
                job.status = JobStatus.FAILED
                job.error = e
            get_error_reporter().report_exception(e, {'task': repr(job.key), 'pool': self.name})
            return
        with self.jobs_lock:
            job.status = JobStatus.COMPLETED
            job.result = result

    @staticmethod
    def _wrap(job: TaskJob) -> BaseException:
        error = job.error
        if isinstance(error, RfsError):
            return error.with_context(task=job.key)
        wrapped = TaskFailedError(f"Task failed: {error}", {'task': job.key})
        wrapped.__cause__ = error
        return wrapped

    def get_status(self, cumulative: bool = False) -> Dict[str, int]:
        """Job counts per status for the latest batch, or over every batch run so far"""
        with self.jobs_lock:
            if cumulative:
                return dict(self.totals)
            counts = {status.value: 0 for status in JobStatus}
            for job in self.jobs.values():
                counts[job.status.value] += 1
            return counts
