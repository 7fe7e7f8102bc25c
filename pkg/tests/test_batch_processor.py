"""
Tests for the task pool, seed derivation and result tables
"""
import hashlib
import threading

import pytest

from app.errors import ParameterError
from app.services.batch_processor import JobStatus, TaskFailedError, TaskPool
from app.services.results import read_table, write_table
from app.services.seeds import derive_rng, derive_seed
from app.theory.reduction import ReductionKind


@pytest.mark.unit
class TestTaskPool:
    """Test cases for TaskPool"""

    def test_results_sorted_by_key(self):
        pool = TaskPool(max_workers=4, name='test')
        results = pool.map(lambda k: k * k, [5, 1, 3, 2, 4])
        assert results == [(1, 1), (2, 4), (3, 9), (4, 16), (5, 25)]
        assert pool.get_status()[JobStatus.COMPLETED.value] == 5

    def test_cumulative_status_spans_batches(self):
        pool = TaskPool(max_workers=2, name='test')
        pool.map(lambda k: k, range(3))
        with pytest.raises(TaskFailedError):
            pool.map(lambda k: 1 / k, [0, 1])
        assert pool.get_status()[JobStatus.FAILED.value] == 1
        assert pool.get_status()[JobStatus.COMPLETED.value] == 1
        totals = pool.get_status(cumulative=True)
        assert totals[JobStatus.COMPLETED.value] == 4
        assert totals[JobStatus.FAILED.value] == 1

    def test_runs_on_several_threads(self):
        seen = set()
        lock = threading.Lock()
        barrier = threading.Barrier(2, timeout=5)

        def task(key):
            barrier.wait()
            with lock:
                seen.add(threading.current_thread().name)
            return key

        TaskPool(max_workers=2).map(task, [0, 1])
        assert len(seen) == 2

    def test_empty_task_list(self):
        assert TaskPool(max_workers=2).run([]) == []

    def test_library_error_keeps_type_and_gets_key(self):
        def task(key):
            if key == 2:
                raise ParameterError("bad k", {'k': key})
            return key

        with pytest.raises(ParameterError) as exc_info:
            TaskPool(max_workers=3).map(task, range(4))
        assert exc_info.value.context['task'] == 2

    def test_smallest_failing_key_is_raised(self):
        def task(key):
            raise ParameterError(f"failed {key}")

        with pytest.raises(ParameterError) as exc_info:
            TaskPool(max_workers=4).map(task, [3, 1, 2])
        assert exc_info.value.message == "failed 1"

    def test_foreign_error_wrapped(self):
        def task(key):
            raise ZeroDivisionError("boom")

        with pytest.raises(TaskFailedError) as exc_info:
            TaskPool(max_workers=1).map(task, ['a'])
        assert isinstance(exc_info.value.__cause__, ZeroDivisionError)

    def test_failures_are_reported(self, mocker):
        reporter = mocker.Mock()
        mocker.patch('app.services.batch_processor.get_error_reporter', return_value=reporter)
        with pytest.raises(TaskFailedError):
            TaskPool(max_workers=1).map(lambda k: 1 / 0, [0])
        reporter.report_exception.assert_called_once()

    def test_duplicate_keys_rejected(self):
        with pytest.raises(ValueError):
            TaskPool().run([(1, lambda: 1), (1, lambda: 2)])


@pytest.mark.unit
class TestSeeds:
    """Test cases for derive_seed"""

    def test_hash_definition(self):
        expected = int.from_bytes(hashlib.sha256(b'7|rfs-map|ahe|50|3').digest()[:8], 'little')
        assert derive_seed(7, 'rfs-map', 'ahe', 50, 3) == expected

    def test_enum_and_float_rendering(self):
        assert derive_seed(0, 'map', ReductionKind.RP, 0.5) == derive_seed(0, 'map', 'rp', '0.5')

    def test_labels_and_indices_separate_streams(self):
        seeds = {derive_seed(1, 'model', 0), derive_seed(1, 'samples', 0),
                 derive_seed(1, 'model', 1), derive_seed(2, 'model', 0)}
        assert len(seeds) == 4

    def test_rng_is_reproducible(self):
        assert derive_rng(3, 'split').random() == derive_rng(3, 'split').random()


@pytest.mark.unit
class TestResultTables:
    """Test cases for CSV result tables"""

    def test_comment_header_and_columns(self, tmp_path):
        path = write_table(tmp_path / 'tables' / 't.csv',
                           [{'k': 1, 'p': 0.1}, {'k': 2}], ('k', 'p'), ['first line', 'second'])
        lines = path.read_text().splitlines()
        assert lines[:3] == ['# first line', '# second', 'k,p']
        assert lines[3] == '1,0.10000000000000001'
        assert lines[4] == '2,'

    def test_read_back(self, tmp_path):
        path = write_table(tmp_path / 't.csv', [{'a': 'x', 'b': 2.5}], ('a', 'b'), ['c'])
        table = read_table(path)
        assert table['a'].tolist() == ['x']
        assert table['b'].tolist() == [2.5]

    def test_rewrite_is_byte_identical(self, tmp_path):
        rows = [{'v': 1 / 3, 'w': 2.0 ** -40}]
        a = write_table(tmp_path / 'a.csv', rows, ('v', 'w'))
        b = write_table(tmp_path / 'b.csv', rows, ('v', 'w'))
        assert a.read_bytes() == b.read_bytes()
