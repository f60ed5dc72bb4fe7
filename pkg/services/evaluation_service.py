"""
Experiment harness: classify every test sample, persist one record per sample and
score the run (accuracy, macro-F1, per-class precision/recall, nearest-neighbor
consistency). Also ranks methods across datasets.
"""

import asyncio
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from ai.base_provider import BaseProvider
from core.config import RunConfig
from core.dataset_store import UNPARSED, Dataset, TimeSeriesSample
from core.profiles import NN_DTW_REFERENCE
from services.ensemble_service import PipelineResources, Prediction, classify_sample, prepare_resources
from services.record_store import OrderedRecordWriter, RecordStore
from utils.error_handler import ConfigurationError, ErrorContext, EvaluationError, HardBackendError
from utils.logger import eval_logger as logger, log_exception

RECORD_SCHEMA = 1
TIMING_KEYS = ("timing",)


@dataclass
class SampleRecord:
    sample_id: int
    true_label: str
    predicted: str
    nn_label: Optional[str] = None
    paths: List[Dict] = field(default_factory=list)
    tally: Dict[str, int] = field(default_factory=dict)
    tie_broken: bool = False
    neighbors: List[Dict] = field(default_factory=list)
    negatives: List[Dict] = field(default_factory=list)
    prompt_hash: str = ""
    error: Optional[str] = None
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def correct(self) -> bool:
        return self.predicted == self.true_label

    def to_dict(self) -> Dict:
        """Fixed key order; `timing` last"""
        return {
            'schema': RECORD_SCHEMA,
            'sample_id': self.sample_id,
            'true_label': self.true_label,
            'predicted': self.predicted,
            'correct': self.correct,
            'nn_label': self.nn_label,
            'paths': self.paths,
            'tally': self.tally,
            'tie_broken': self.tie_broken,
            'neighbors': self.neighbors,
            'negatives': self.negatives,
            'prompt_hash': self.prompt_hash,
            'error': self.error,
            'timing': self.timing,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SampleRecord":
        if data.get('schema') != RECORD_SCHEMA:
            raise EvaluationError(f"Unsupported record schema {data.get('schema')!r}")
        fields = {k: v for k, v in data.items() if k not in ('schema', 'correct')}
        return cls(**fields)

    @classmethod
    def from_prediction(cls, sample: TimeSeriesSample, prediction: Prediction, seconds: float) -> "SampleRecord":
        return cls(
            sample_id=sample.id,
            true_label=sample.label,
            predicted=prediction.final_label,
            nn_label=prediction.nn_label,
            paths=[p.to_dict() for p in prediction.paths],
            tally=prediction.tally,
            tie_broken=prediction.tie_broken,
            neighbors=[h.to_dict() for h in prediction.neighbor_provenance],
            negatives=[h.to_dict() for h in prediction.negative_provenance],
            prompt_hash=prediction.prompt_hash,
            timing={'seconds': round(seconds, 6)},
        )


def deterministic_view(record: Mapping) -> Dict:
    """Record without the timing fields"""
    return {k: v for k, v in record.items() if k not in TIMING_KEYS}


def accuracy(records: Sequence[SampleRecord]) -> float:
    """UNPARSED predictions count as incorrect"""
    if not records:
        return 0.0
    return sum(r.correct for r in records) / len(records)


def per_class_scores(records: Sequence[SampleRecord], classes: Optional[Sequence[str]] = None) -> Dict[str, Dict]:
    """Precision, recall, F1 and support per class; an empty denominator scores 0"""
    if classes is None:
        seen = {r.true_label for r in records} | {r.predicted for r in records}
        classes = sorted(seen - {UNPARSED})
    scores = {}
    for c in classes:
        tp = sum(1 for r in records if r.predicted == c and r.true_label == c)
        fp = sum(1 for r in records if r.predicted == c and r.true_label != c)
        fn = sum(1 for r in records if r.predicted != c and r.true_label == c)
        scores[c] = {
            'precision': tp / (tp + fp) if tp + fp else 0.0,
            'recall': tp / (tp + fn) if tp + fn else 0.0,
            'f1': 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0,
            'support': tp + fn,
        }
    return scores


def macro_f1(records: Sequence[SampleRecord], classes: Optional[Sequence[str]] = None) -> float:
    """
    Unweighted mean of per-class F1. UNPARSED matches no class, so it only adds false
    negatives. A class absent from both truth and predictions contributes F1 = 0.
    """
    scores = per_class_scores(records, classes)
    if not scores:
        return 0.0
    return float(np.mean([s['f1'] for s in scores.values()]))


def consistency_breakdown(records: Sequence[SampleRecord]) -> Dict[str, Dict]:
    """
    2x2 partition of predictions: agreement with the rank-1 neighbor's label by
    correctness, with the correct share of each row.
    """
    table = {row: {'correct': 0, 'incorrect': 0} for row in ('agree', 'disagree')}
    for r in records:
        row = 'agree' if r.predicted != UNPARSED and r.predicted == r.nn_label else 'disagree'
        table[row]['correct' if r.correct else 'incorrect'] += 1
    for cells in table.values():
        total = cells['correct'] + cells['incorrect']
        cells['total'] = total
        cells['correct_rate'] = cells['correct'] / total if total else None
    return table


def mean_ranks(accuracies: Mapping[str, Mapping[str, float]]) -> Dict[str, float]:
    """
    Mean rank per method over datasets; rank 1 is the highest accuracy and ties share
    the average rank.

    Raises:
        EvaluationError: methods cover different dataset lists
    """
    if not accuracies:
        raise EvaluationError("No methods to rank")
    methods = list(accuracies)
    datasets = sorted(accuracies[methods[0]])
    for method in methods[1:]:
        if sorted(accuracies[method]) != datasets:
            raise EvaluationError(f"Method '{method}' covers {sorted(accuracies[method])}, expected {datasets}")
    if not datasets:
        raise EvaluationError("No datasets to rank over")
    scores = np.array([[float(accuracies[m][d]) for m in methods] for d in datasets])
    ranks = np.vstack([rankdata(-row, method='average') for row in scores])
    return {m: float(r) for m, r in zip(methods, ranks.mean(axis=0))}


@dataclass
class EvalReport:
    dataset: str
    config_hash: str
    n: int
    accuracy: float
    macro_f1: float
    per_class: Dict[str, Dict]
    consistency: Dict[str, Dict]
    unparsed: int
    tie_broken: int
    errors: int
    config: Dict
    reference_accuracy: Optional[float] = None
    reference_delta: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)

    def summary(self) -> str:
        return (f"{self.dataset}: accuracy={self.accuracy:.4f} macro_f1={self.macro_f1:.4f} "
                f"unparsed={self.unparsed} n={self.n}")


def _reference(config: RunConfig, dataset_name: str) -> Tuple[Optional[float], List[str]]:
    if (config.backend.type != "mock" or config.metric != "dtw" or config.k != 1
            or dataset_name not in NN_DTW_REFERENCE):
        return None, []
    window = "unconstrained" if config.dtw_window is None else f"window {config.dtw_window}"
    notes = [
        f"Reference is the published 1-NN DTW accuracy for {dataset_name}; this run uses dependent "
        f"multivariate DTW ({window}), raw per-step Euclidean costs, "
        f"{'z-normalized' if config.normalize else 'no'} normalization. Differences in DTW variant, "
        "window or normalization account for deviations."
    ]
    return NN_DTW_REFERENCE[dataset_name], notes


def build_report(records: Sequence[SampleRecord], dataset: Dataset, config: RunConfig) -> EvalReport:
    """Score persisted records"""
    reference, notes = _reference(config, dataset.name)
    acc = accuracy(records)
    return EvalReport(
        dataset=dataset.name,
        config_hash=config.config_hash(),
        n=len(records),
        accuracy=acc,
        macro_f1=macro_f1(records, dataset.classes),
        per_class=per_class_scores(records, dataset.classes),
        consistency=consistency_breakdown(records),
        unparsed=sum(1 for r in records if r.predicted == UNPARSED),
        tie_broken=sum(1 for r in records if r.tie_broken),
        errors=sum(1 for r in records if r.error),
        config=config.echo(),
        reference_accuracy=reference,
        reference_delta=None if reference is None else acc - reference,
        notes=notes,
    )


def run_dir_for(config: RunConfig, dataset_name: str) -> Path:
    return Path(config.out) / dataset_name / config.config_hash()


def check_zero_shot(config: RunConfig, backend: BaseProvider):
    if config.k == 0 and backend.backend_id == "mock" and not config.allow_zero_shot:
        raise ConfigurationError("k = 0 with the mock backend always answers the first class; "
                                 "set allow_zero_shot to run it anyway")


def write_prompt(directory: Path, sample_id: int, rendered: str) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{sample_id:05d}.txt"
    path.write_text(rendered, encoding='utf-8')
    return path


async def run_experiment(config: RunConfig, dataset: Dataset, backend: BaseProvider,
                         resources: Optional[PipelineResources] = None
                         ) -> Tuple[List[SampleRecord], EvalReport]:
    """
    Classify every test sample and score the run.

    Records go to `<out>/<dataset>/<config_hash>/records.jsonl` in ascending sample id;
    with `resume` set, samples already recorded are skipped. Any other per-sample failure
    becomes an UNPARSED record carrying the error. A hard backend failure
    aborts the run, keeping the records written so far.
    """
    check_zero_shot(config, backend)
    loop = asyncio.get_running_loop()
    if resources is None:
        resources = await loop.run_in_executor(None, prepare_resources, dataset, config)

    run_dir = run_dir_for(config, dataset.name)
    store = RecordStore(run_dir / "records.jsonl")
    if config.resume and store.exists():
        store.repair()
        done = store.completed_ids()
        logger.info(f"Resuming {dataset.name} run {config.config_hash()}: {len(done)} samples already recorded")
    else:
        store.reset()
        done = set()

    pending = sorted((s for s in dataset.test if s.id not in done), key=lambda s: s.id)
    writer = OrderedRecordWriter(store, [s.id for s in pending])
    semaphore = asyncio.Semaphore(config.parallelism)
    prompt_dir = run_dir / "prompts"

    async def worker(sample: TimeSeriesSample):
        async with semaphore:
            start = time.perf_counter()
            try:
                prediction = await classify_sample(sample, dataset, config, backend, resources)
                record = SampleRecord.from_prediction(sample, prediction, time.perf_counter() - start)
                if config.dump_prompts and prediction.bundle is not None:
                    with ErrorContext(f"prompt dump for sample {sample.id}"):
                        write_prompt(prompt_dir, sample.id, prediction.bundle.rendered)
            except HardBackendError:
                raise
            except Exception as e:
                log_exception(logger, e, f"sample {sample.id}")
                record = SampleRecord(sample_id=sample.id, true_label=sample.label, predicted=UNPARSED,
                                      error=f"{type(e).__name__}: {e}",
                                      timing={'seconds': round(time.perf_counter() - start, 6)})
            writer.add(record.to_dict())

    logger.info(f"Classifying {len(pending)} of {len(dataset.test)} {dataset.name} test samples "
                f"(parallelism={config.parallelism}, paths={len(config.ensemble.temperatures)})")
    tasks = [asyncio.ensure_future(worker(s)) for s in pending]
    try:
        await asyncio.gather(*tasks)
    except BaseException as e:
        for task in tasks:
            task.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        logger.error(f"Run aborted after {writer.written} new records ({writer.pending} held out of order "
                     f"are dropped and rerun on resume): {type(e).__name__}: {e}")
        raise

    records = [SampleRecord.from_dict(r) for r in store.load()]
    if len(records) != len(dataset.test):
        raise EvaluationError(f"{store.path} holds {len(records)} records for {len(dataset.test)} test samples")
    report = build_report(records, dataset, config)
    with open(run_dir / "report.json", 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, indent=2, ensure_ascii=False)
        f.write("\n")
    logger.info(report.summary())
    return records, report
