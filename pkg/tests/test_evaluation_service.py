"""
Tests for the experiment harness, record persistence and scoring
"""

import asyncio
import json
from dataclasses import replace

import pytest

from ai.base_provider import BaseProvider, Completion, CompletionRequest
from ai.mock_provider import MockProvider, oracle_label
from core.config import BackendConfig, EnsembleConfig, RunConfig
from core.dataset_store import UNPARSED
from core.profiles import NN_DTW_REFERENCE
from services.evaluation_service import (SampleRecord, accuracy, build_report, check_zero_shot,
                                         consistency_breakdown, deterministic_view, macro_f1, mean_ranks,
                                         per_class_scores, run_dir_for, run_experiment)
from services.record_store import OrderedRecordWriter, RecordStore
from tests.helpers import dtw_table, knn_majority, manhattan
from utils.error_handler import BackendAuthError, ConfigurationError, EvaluationError


def record(sample_id, true, predicted, nn=None):
    return SampleRecord(sample_id=sample_id, true_label=true, predicted=predicted, nn_label=nn)


class FailingAfter(BaseProvider):
    """Oracle answers until `limit` calls, then a hard failure"""

    def __init__(self, limit: int):
        super().__init__({})
        self.limit = limit
        self.calls = 0

    @property
    def backend_id(self) -> str:
        return "failing"

    async def complete(self, request: CompletionRequest) -> Completion:
        self.calls += 1
        if self.calls > self.limit:
            raise BackendAuthError("key revoked")
        return Completion(text=f"Label: {oracle_label(request.bundle)}", backend_id=self.backend_id)


class GarbledOnCall(BaseProvider):
    """Oracle answers, except call number `bad_call` dies with a decoding error"""

    def __init__(self, bad_call: int):
        super().__init__({})
        self.bad_call = bad_call
        self.calls = 0

    @property
    def backend_id(self) -> str:
        return "garbled"

    async def complete(self, request: CompletionRequest) -> Completion:
        self.calls += 1
        if self.calls == self.bad_call:
            raise json.JSONDecodeError("Expecting value", "<html>502 bad gateway</html>", 0)
        return Completion(text=f"Label: {oracle_label(request.bundle)}", backend_id=self.backend_id)


class StallsAfterRevokedKey(BaseProvider):
    """First call fails hard after a short wait; every later call hangs"""

    def __init__(self):
        super().__init__({})
        self.calls = 0

    @property
    def backend_id(self) -> str:
        return "stalling"

    async def complete(self, request: CompletionRequest) -> Completion:
        self.calls += 1
        if self.calls == 1:
            await asyncio.sleep(0.05)
            raise BackendAuthError("key revoked")
        await asyncio.sleep(30)
        raise AssertionError("sibling sample was not cancelled")


@pytest.fixture
def run_config(tmp_path):
    return RunConfig(dataset="Toy", metric="man", k=3, out=str(tmp_path / "runs"), parallelism=3)


def read_lines(path):
    return [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines()]


class TestScores:

    def test_accuracy_counts_unparsed_as_wrong(self):
        """Test unparsed predictions count as wrong"""
        records = [record(0, "a", "a"), record(1, "b", UNPARSED)]
        assert accuracy(records) == 0.5

    def test_perfect_macro_f1(self):
        """Test macro-F1 of perfect predictions"""
        records = [record(i, label, label) for i, label in enumerate(["a", "b"] * 50)]
        assert macro_f1(records, ["a", "b"]) == 1.0

    def test_single_class_predictions(self):
        """Test macro-F1 when everything is predicted as one class"""
        records = [record(i, label, "a") for i, label in enumerate(["a"] * 50 + ["b"] * 50)]
        assert macro_f1(records, ["a", "b"]) == pytest.approx(1 / 3)

    def test_unparsed_matches_no_class(self):
        """Test unparsed predictions score against no class"""
        records = [record(0, "a", UNPARSED), record(1, "b", "b")]
        scores = per_class_scores(records, ["a", "b"])
        assert scores["a"] == {'precision': 0.0, 'recall': 0.0, 'f1': 0.0, 'support': 1}
        assert scores["b"]['f1'] == 1.0
        assert UNPARSED not in per_class_scores(records)

    def test_consistency_fixture(self):
        """Test agreement with the nearest neighbor split into correct and incorrect"""
        records = [record(i, "a", "a", nn="a") for i in range(3)]
        records += [record(3, "a", "a", nn="b"), record(4, "a", "b", nn="a")]
        table = consistency_breakdown(records)
        assert (table['agree']['correct'], table['agree']['incorrect']) == (3, 0)
        assert (table['disagree']['correct'], table['disagree']['incorrect']) == (1, 1)
        assert table['agree']['correct_rate'] == 1.0
        assert table['disagree']['correct_rate'] == 0.5

    def test_unparsed_counts_as_disagreement(self):
        """Test an unparsed prediction disagrees with its neighbor"""
        table = consistency_breakdown([record(0, "a", UNPARSED, nn=UNPARSED)])
        assert table['disagree']['total'] == 1
        assert table['agree']['correct_rate'] is None


class TestMeanRanks:

    def test_two_methods(self):
        """Test ranks of two methods on one dataset"""
        assert mean_ranks({"x": {"d": 0.9}, "y": {"d": 0.8}}) == {"x": 1.0, "y": 2.0}

    def test_tie_shares_average_rank(self):
        """Test tied methods share the average rank"""
        assert mean_ranks({"x": {"d": 0.7}, "y": {"d": 0.7}}) == {"x": 1.5, "y": 1.5}

    def test_three_by_three(self):
        """Test mean ranks over three datasets"""
        table = {
            "A": {"d1": 0.9, "d2": 0.8, "d3": 0.7},
            "B": {"d1": 0.8, "d2": 0.8, "d3": 0.9},
            "C": {"d1": 0.7, "d2": 0.6, "d3": 0.7},
        }
        ranks = mean_ranks(table)
        assert ranks["A"] == pytest.approx(5 / 3)
        assert ranks["B"] == pytest.approx(1.5)
        assert ranks["C"] == pytest.approx(17 / 6)

    def test_ragged_input(self):
        """Test methods must cover the same datasets"""
        with pytest.raises(EvaluationError):
            mean_ranks({"x": {"d1": 0.9}, "y": {"d2": 0.8}})


class TestRecordStore:

    def test_repair_drops_partial_line(self, tmp_path):
        """Test repair truncates a partial trailing record"""
        store = RecordStore(tmp_path / "records.jsonl")
        store.append({'sample_id': 0})
        with open(store.path, 'a', encoding='utf-8') as f:
            f.write('{"sample_id": 1, "trunc')
        assert store.load() == [{'sample_id': 0}]
        assert store.repair() > 0
        assert store.path.read_text(encoding='utf-8') == '{"sample_id": 0}\n'

    def test_writer_reorders(self, tmp_path):
        """Test records are appended in sample order whatever their arrival order"""
        store = RecordStore(tmp_path / "records.jsonl")
        writer = OrderedRecordWriter(store, [0, 1, 2])
        writer.add({'sample_id': 2})
        writer.add({'sample_id': 0})
        assert writer.written == 1
        assert writer.pending == 1
        writer.add({'sample_id': 1})
        assert [r['sample_id'] for r in store.load()] == [0, 1, 2]

    def test_duplicate_record(self, tmp_path):
        """Test a second record for one sample is rejected"""
        writer = OrderedRecordWriter(RecordStore(tmp_path / "r.jsonl"), [0, 1])
        writer.add({'sample_id': 1})
        with pytest.raises(EvaluationError):
            writer.add({'sample_id': 1})


class TestRunExperiment:

    @pytest.mark.asyncio
    async def test_mock_run_equals_knn(self, toy_dataset, run_config):
        """Test a mock Manhattan run equals kNN majority"""
        records, report = await run_experiment(run_config, toy_dataset, MockProvider())
        expected = [knn_majority(toy_dataset.train, s, manhattan, 3) for s in toy_dataset.test]
        assert [r.predicted for r in records] == expected
        oracle_acc = sum(p == s.label for p, s in zip(expected, toy_dataset.test)) / len(toy_dataset.test)
        assert report.accuracy == pytest.approx(oracle_acc)
        assert report.n == len(toy_dataset.test)
        assert report.unparsed == 0

    @pytest.mark.asyncio
    async def test_mock_dtw_run_equals_knn(self, toy_dataset, tmp_path):
        """Test a mock DTW run equals kNN majority"""
        config = RunConfig(dataset="Toy", metric="dtw", k=5, out=str(tmp_path / "runs"))
        records, _ = await run_experiment(config, toy_dataset, MockProvider())
        assert [r.predicted for r in records] == \
            [knn_majority(toy_dataset.train, s, dtw_table, 5) for s in toy_dataset.test]

    @pytest.mark.asyncio
    async def test_records_on_disk(self, toy_dataset, run_config):
        """Test records and report on disk"""
        records, report = await run_experiment(run_config, toy_dataset, MockProvider())
        run_dir = run_dir_for(run_config, "Toy")
        lines = read_lines(run_dir / "records.jsonl")
        assert [line['sample_id'] for line in lines] == list(range(len(toy_dataset.test)))
        assert list(lines[0]) == ['schema', 'sample_id', 'true_label', 'predicted', 'correct', 'nn_label',
                                  'paths', 'tally', 'tie_broken', 'neighbors', 'negatives', 'prompt_hash',
                                  'error', 'timing']
        assert sum(line['correct'] for line in lines) / len(lines) == report.accuracy
        saved = json.loads((run_dir / "report.json").read_text(encoding='utf-8'))
        assert saved['accuracy'] == report.accuracy
        assert saved['config_hash'] == run_config.config_hash()

    @pytest.mark.asyncio
    async def test_k1_never_disagrees(self, toy_dataset, tmp_path):
        """Test k=1 always agrees with the nearest neighbor"""
        config = RunConfig(dataset="Toy", k=1, out=str(tmp_path / "runs"))
        _, report = await run_experiment(config, toy_dataset, MockProvider())
        assert report.consistency['disagree']['total'] == 0

    @pytest.mark.asyncio
    async def test_repeated_runs_match(self, toy_dataset, run_config):
        """Test repeated runs write the same records"""
        await run_experiment(run_config, toy_dataset, MockProvider())
        path = run_dir_for(run_config, "Toy") / "records.jsonl"
        first = [deterministic_view(r) for r in read_lines(path)]
        await run_experiment(run_config, toy_dataset, MockProvider())
        second = [deterministic_view(r) for r in read_lines(path)]
        assert first == second

    @pytest.mark.asyncio
    async def test_resume_after_interruption(self, toy_dataset, run_config):
        """Test resume skips recorded samples and repairs a torn line"""
        await run_experiment(run_config, toy_dataset, MockProvider())
        path = run_dir_for(run_config, "Toy") / "records.jsonl"
        complete = [deterministic_view(r) for r in read_lines(path)]

        kept = path.read_text(encoding='utf-8').splitlines(keepends=True)[:3]
        path.write_text("".join(kept) + '{"schema": 1, "sample_id": 3, "tru', encoding='utf-8')

        backend = FailingAfter(limit=10_000)
        run_config.resume = True
        records, _ = await run_experiment(run_config, toy_dataset, backend)
        assert [deterministic_view(r) for r in read_lines(path)] == complete
        assert len(records) == len(toy_dataset.test)
        assert backend.calls == (len(toy_dataset.test) - 3) * len(run_config.ensemble.temperatures)

    @pytest.mark.asyncio
    async def test_hard_failure_keeps_prefix(self, toy_dataset, tmp_path):
        """Test a hard failure keeps the records written so far"""
        config = RunConfig(dataset="Toy", out=str(tmp_path / "runs"), parallelism=1,
                           ensemble=EnsembleConfig(temperatures=[0.0]))
        with pytest.raises(BackendAuthError):
            await run_experiment(config, toy_dataset, FailingAfter(limit=3))
        lines = read_lines(run_dir_for(config, "Toy") / "records.jsonl")
        assert [line['sample_id'] for line in lines] == [0, 1, 2]

    @pytest.mark.asyncio
    async def test_unparsed_samples_are_recorded(self, toy_dataset, run_config):
        """Test unparsed samples still get records"""
        from tests.helpers import ScriptedBackend

        records, report = await run_experiment(run_config, toy_dataset, ScriptedBackend({}, default="hmm"))
        assert all(r.predicted == UNPARSED for r in records)
        assert report.unparsed == len(records)
        assert report.accuracy == 0.0

    @pytest.mark.asyncio
    async def test_dump_prompts(self, toy_dataset, run_config):
        """Test one prompt file per sample"""
        run_config.dump_prompts = True
        records, _ = await run_experiment(run_config, toy_dataset, MockProvider())
        prompt_dir = run_dir_for(run_config, "Toy") / "prompts"
        assert sorted(p.name for p in prompt_dir.iterdir()) == [f"{r.sample_id:05d}.txt" for r in records]

    @pytest.mark.asyncio
    async def test_unexpected_sample_error_is_recorded(self, toy_dataset, tmp_path):
        """Test a non-taxonomy exception in one sample leaves the run going"""
        config = RunConfig(dataset="Toy", metric="man", k=3, out=str(tmp_path / "runs"), parallelism=1,
                           ensemble=EnsembleConfig(temperatures=[0.0]))
        records, report = await run_experiment(config, toy_dataset, GarbledOnCall(bad_call=2))
        assert len(records) == len(toy_dataset.test)
        assert records[1].predicted == UNPARSED
        assert records[1].error.startswith("JSONDecodeError")
        assert report.errors == 1
        others = [r.predicted for r in records if r.sample_id != 1]
        assert others == [knn_majority(toy_dataset.train, s, manhattan, 3) for s in toy_dataset.test if s.id != 1]

    @pytest.mark.asyncio
    async def test_abort_cancels_in_flight_samples(self, toy_dataset, tmp_path):
        """Test a hard failure cancels the samples still waiting on the backend"""
        config = RunConfig(dataset="Toy", out=str(tmp_path / "runs"), parallelism=4,
                           ensemble=EnsembleConfig(temperatures=[0.0]))
        backend = StallsAfterRevokedKey()
        with pytest.raises(BackendAuthError):
            await asyncio.wait_for(run_experiment(config, toy_dataset, backend), timeout=10)
        assert 1 <= backend.calls <= 4
        leftover = [t for t in asyncio.all_tasks() if t is not asyncio.current_task() and not t.done()]
        assert leftover == []
        assert read_lines(run_dir_for(config, "Toy") / "records.jsonl") == []

    @pytest.mark.asyncio
    async def test_k_beyond_training_split(self, toy_dataset, tmp_path):
        """Test an unservable k fails the run before any record is written"""
        config = RunConfig(dataset="Toy", k=len(toy_dataset.train) + 1, out=str(tmp_path / "runs"))
        with pytest.raises(ConfigurationError, match="exceeds"):
            await run_experiment(config, toy_dataset, MockProvider())
        assert not (run_dir_for(config, "Toy") / "records.jsonl").exists()

    def test_zero_shot_mock_needs_opt_in(self):
        """Test zero-shot mock runs need an explicit opt-in"""
        with pytest.raises(ConfigurationError):
            check_zero_shot(RunConfig(dataset="Toy", k=0), MockProvider())
        check_zero_shot(RunConfig(dataset="Toy", k=0, allow_zero_shot=True), MockProvider())


class TestReferenceAccuracy:

    @pytest.fixture
    def cricket(self, toy_dataset):
        return replace(toy_dataset, name="Cricket")

    @pytest.mark.asyncio
    async def test_one_nn_dtw_mock_run(self, cricket, tmp_path):
        """Test a mock 1-NN DTW run on a referenced dataset reports the published accuracy"""
        config = RunConfig(dataset="Cricket", metric="dtw", k=1, out=str(tmp_path / "runs"))
        _, report = await run_experiment(config, cricket, MockProvider())
        assert report.reference_accuracy == NN_DTW_REFERENCE["Cricket"]
        assert report.reference_delta == pytest.approx(report.accuracy - NN_DTW_REFERENCE["Cricket"])
        assert len(report.notes) == 1
        assert "dependent multivariate DTW (unconstrained)" in report.notes[0]
        saved = json.loads((run_dir_for(config, "Cricket") / "report.json").read_text(encoding='utf-8'))
        assert saved['reference_accuracy'] == NN_DTW_REFERENCE["Cricket"]
        assert saved['notes'] == report.notes

    def test_window_is_named_in_note(self, cricket):
        """Test a banded run says which window it used"""
        config = RunConfig(dataset="Cricket", metric="dtw", k=1, dtw_window=2)
        report = build_report([record(0, "a", "a")], cricket, config)
        assert report.reference_accuracy == NN_DTW_REFERENCE["Cricket"]
        assert "window 2" in report.notes[0]

    @pytest.mark.parametrize("overrides", [
        {'metric': 'man'},
        {'metric': 'ed'},
        {'k': 3},
        {'backend': BackendConfig(type="http", url="http://127.0.0.1:1/v1/chat/completions")},
    ])
    def test_absent_outside_one_nn_dtw_mock(self, cricket, overrides):
        """Test other metrics, k or backends carry no reference"""
        settings = {'metric': 'dtw', 'k': 1}
        settings.update(overrides)
        report = build_report([record(0, "a", "a")], cricket, RunConfig(dataset="Cricket", **settings))
        assert report.reference_accuracy is None
        assert report.reference_delta is None
        assert report.notes == []

    def test_absent_for_unreferenced_dataset(self, toy_dataset):
        """Test a dataset without a published figure carries no reference"""
        report = build_report([record(0, "a", "a")], toy_dataset, RunConfig(dataset="Toy", metric="dtw", k=1))
        assert report.reference_accuracy is None
