"""
Per-sample pipeline: retrieval, negatives, table encoding, prompt assembly,
multi-path inference and majority voting.
"""

import asyncio
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ai.base_provider import BaseProvider, Completion, CompletionRequest
from ai.label_extractor import extract_label
from ai.prompt_builder import (NEGATIVE, POSITIVE, ExampleBlock, PromptBundle, assemble_prompt, build_context,
                               build_instruction)
from core.config import RunConfig
from core.dataset_store import UNPARSED, ChannelStats, Dataset, TimeSeriesSample
from core.encoding.table_encoder import TableFormat, serialize, to_table
from core.vector.clustering import ClusterModel, kmeans_fit, select_negatives
from core.vector.metrics import DistanceMetric
from core.vector.neighbor_index import NeighborHit, NeighborIndex
from utils.error_handler import BackendError, ClusterError, ConfigurationError, EnsembleError, HardBackendError
from utils.logger import ensemble_logger as logger


@dataclass(frozen=True)
class InferencePath:
    path_index: int
    temperature: float
    extracted: str
    completion: Optional[Completion] = None
    model_id: str = ""
    error: Optional[str] = None

    @property
    def parsed(self) -> bool:
        return self.extracted != UNPARSED

    def to_dict(self) -> Dict:
        return {
            'path_index': self.path_index,
            'temperature': self.temperature,
            'model_id': self.model_id,
            'extracted': self.extracted,
            'attempts': self.completion.attempts if self.completion else 0,
            'error': self.error,
        }


@dataclass
class Prediction:
    final_label: str
    tally: Dict[str, int]
    paths: List[InferencePath]
    tie_broken: bool = False
    neighbor_provenance: List[NeighborHit] = field(default_factory=list)
    negative_provenance: List[NeighborHit] = field(default_factory=list)
    nn_label: Optional[str] = None
    bundle: Optional[PromptBundle] = field(default=None, repr=False)

    @property
    def prompt_hash(self) -> str:
        return self.bundle.prompt_hash if self.bundle is not None else ""


async def run_multi_path(bundle: PromptBundle, temps: Sequence[float], backend: BaseProvider,
                         model_ids: Sequence[str] = (), max_tokens: int = 1024) -> List[InferencePath]:
    """
    One completion per temperature (per model when `model_ids` is given), all for the same bundle.

    A failed path is recorded as UNPARSED with its error; hard backend failures propagate.

    Raises:
        EnsembleError: every path failed
    """
    if not temps:
        raise EnsembleError("At least one temperature is required")
    plan: List[Tuple[str, float]] = [(model, t) for model in (model_ids or [""]) for t in temps]

    async def run_path(index: int, model_id: str, temperature: float) -> InferencePath:
        request = CompletionRequest(bundle=bundle, temperature=temperature, max_tokens=max_tokens, model_id=model_id)
        try:
            completion = await backend.complete(request)
        except HardBackendError:
            raise
        except BackendError as e:
            logger.warning(f"Path {index} (T={temperature}) failed: {e}")
            return InferencePath(index, temperature, UNPARSED, model_id=model_id, error=f"{type(e).__name__}: {e}")
        return InferencePath(index, temperature, extract_label(completion.text, bundle.classes),
                             completion=completion, model_id=model_id)

    paths = list(await asyncio.gather(*(run_path(i, m, t) for i, (m, t) in enumerate(plan))))
    if all(p.error is not None for p in paths):
        raise EnsembleError(f"All {len(paths)} inference paths failed; first error: {paths[0].error}")
    return paths


def majority_vote(paths: Sequence[InferencePath]) -> Prediction:
    """
    Most-voted parsed label. Ties go to the tied label whose producers include the
    lowest-temperature path (lowest path_index second).

    Raises:
        EnsembleError: no parsed path
    """
    parsed = [p for p in paths if p.parsed]
    if not parsed:
        raise EnsembleError(f"None of {len(paths)} paths produced a label")
    tally = Counter(p.extracted for p in parsed)
    top = max(tally.values())
    tied = [label for label, count in tally.items() if count == top]
    first_producer = {
        label: min((p.temperature, p.path_index) for p in parsed if p.extracted == label) for label in tied
    }
    winner = min(tied, key=lambda label: first_producer[label])
    return Prediction(final_label=winner, tally=dict(sorted(tally.items())), paths=list(paths),
                      tie_broken=len(tied) > 1)


@dataclass
class PipelineResources:
    """Everything built once per run and shared read-only by every sample"""
    dataset: Dataset
    config: RunConfig
    index: NeighborIndex
    table_format: TableFormat
    table_channel_names: Tuple[str, ...]
    cluster_model: Optional[ClusterModel] = None

    @property
    def retrieval_k(self) -> int:
        # The rank-1 neighbor is always retrieved for provenance
        return max(self.config.k, 1)


def build_metric(dataset: Dataset, config: RunConfig) -> DistanceMetric:
    stats: Optional[ChannelStats] = None
    if config.metric == "sed":
        if config.normalize:
            m = dataset.n_channels
            stats = ChannelStats(mean=np.zeros(m), std=np.ones(m))
        else:
            stats = dataset.stats
    return DistanceMetric(kind=config.metric, dtw_window=config.dtw_window, stats=stats)


def prepare_resources(dataset: Dataset, config: RunConfig) -> PipelineResources:
    """
    Build the retrieval index and, when negatives are on, fit the cluster model.

    Raises:
        ConfigurationError: k or negatives.count cannot be served by the training split
    """
    n = len(dataset.train)
    if not n:
        raise EnsembleError(f"{dataset.name} has an empty training split")
    if config.k > n:
        raise ConfigurationError(f"k={config.k} exceeds the {dataset.name} training split size {n}")
    index = NeighborIndex(dataset.train, build_metric(dataset, config),
                          normalize_with=dataset.stats if config.normalize else None)
    model = None
    if config.negatives.count > 0:
        K = len(dataset.classes) if config.negatives.k_clusters == "classes" else int(config.negatives.k_clusters)
        if K > n:
            raise ClusterError(f"K={K} exceeds the training split size {n}")
        model = kmeans_fit(dataset.train, K, seed=config.negatives_seed, max_iters=config.negatives.max_iters,
                           stats=None if config.negatives.raw_space else dataset.stats)
        # a query landing in the largest cluster sees the smallest pool
        smallest_pool = n - max(len(model.members(c)) for c in range(model.K))
        if config.negatives.count > smallest_pool:
            raise ConfigurationError(f"negatives.count={config.negatives.count} exceeds the {smallest_pool} "
                                     f"training samples outside the largest of {K} clusters")
    return PipelineResources(dataset=dataset, config=config, index=index, table_format=config.table_format,
                             table_channel_names=table_channel_names(dataset, config), cluster_model=model)


def table_channel_names(dataset: Dataset, config: RunConfig) -> Tuple[str, ...]:
    """Card channel names, or positional x1..xm when names are ablated"""
    if config.ablation.channel_names:
        return tuple(dataset.channel_names)
    return tuple(f"x{j + 1}" for j in range(dataset.n_channels))


def encode_sample(sample: TimeSeriesSample, resources: PipelineResources) -> str:
    table = to_table(sample, resources.table_channel_names, include_time=resources.config.ablation.time_column)
    return serialize(table, resources.table_format)


def build_bundle(query: TimeSeriesSample, resources: PipelineResources
                 ) -> Tuple[PromptBundle, List[NeighborHit], List[NeighborHit]]:
    """Retrieve, encode and assemble; returns the bundle, all retrieved hits and the negatives"""
    config = resources.config
    dataset = resources.dataset
    hits = resources.index.search(query.values, resources.retrieval_k)
    positives = hits[:config.k]

    negatives: List[NeighborHit] = []
    if resources.cluster_model is not None:
        negatives = select_negatives(query, resources.cluster_model, dataset.train, config.negatives.count)

    examples = [ExampleBlock(POSITIVE, encode_sample(dataset.train[h.train_index], resources), h.label, rank,
                             train_index=h.train_index, distance=h.distance)
                for rank, h in enumerate(positives, start=1)]
    examples += [ExampleBlock(NEGATIVE, encode_sample(dataset.train[h.train_index], resources), h.label, rank,
                              train_index=h.train_index, distance=h.distance)
                 for rank, h in enumerate(negatives, start=1)]

    context = build_context(dataset.card, dataset, include_channels=config.ablation.channel_names) \
        if config.ablation.context else None
    bundle = assemble_prompt(
        context=context,
        examples=examples,
        query_table=encode_sample(query, resources),
        instruction=build_instruction(dataset.classes, decomposition=config.ablation.decomposition),
        magic=config.magic_words,
        classes=dataset.classes,
    )
    return bundle, hits, negatives


async def classify_sample(query: TimeSeriesSample, dataset: Dataset, config: RunConfig, backend: BaseProvider,
                          resources: Optional[PipelineResources] = None) -> Prediction:
    """
    Full pipeline for one query. Retrieval and encoding run in the default executor.

    A sample whose paths all come back unparsed is returned with final_label UNPARSED.
    """
    resources = resources or prepare_resources(dataset, config)
    loop = asyncio.get_running_loop()
    bundle, hits, negatives = await loop.run_in_executor(None, build_bundle, query, resources)

    paths = await run_multi_path(bundle, config.ensemble.temperatures, backend,
                                 model_ids=config.ensemble.backends, max_tokens=config.backend.max_tokens)
    try:
        prediction = majority_vote(paths)
    except EnsembleError:
        logger.warning(f"Sample {query.id}: no path produced a label")
        prediction = Prediction(final_label=UNPARSED, tally={}, paths=paths)

    prediction.neighbor_provenance = hits[:config.k]
    prediction.negative_provenance = negatives
    prediction.nn_label = hits[0].label
    prediction.bundle = bundle
    logger.debug(f"Sample {query.id}: {prediction.final_label} tally={prediction.tally} nn={prediction.nn_label}")
    return prediction
