"""
seriestable application core: wires configuration, datasets, backends and the harness.
"""

import asyncio
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ai.base_provider import BaseProvider
from ai.provider_factory import BackendFactory
from core.config import RunConfig
from core.dataset_store import Dataset, TimeSeriesSample, load_dataset
from core.encoding.table_encoder import TableFormat, estimate_tokens, serialize, to_table
from services.ensemble_service import build_bundle, prepare_resources, table_channel_names
from services.evaluation_service import EvalReport, SampleRecord, check_zero_shot, run_dir_for, run_experiment
from utils.error_handler import DatasetNotFoundError, SeriesTableError
from utils.logger import ROOT_LOGGER_NAME, setup_logger


class SeriesTableApplication:
    """One configured run: dataset, backend and output directory"""

    def __init__(self, config: RunConfig, configure_logging: bool = True):
        self.config = config
        if configure_logging:
            setup_logger(ROOT_LOGGER_NAME, log_file=config.logging.file or None, level=config.logging.level,
                         run_tag=f"{config.dataset}/{config.config_hash()}")
        self.logger = logging.getLogger(f"{ROOT_LOGGER_NAME}.app")
        self._dataset: Optional[Dataset] = None

    @property
    def run_dir(self) -> Path:
        return run_dir_for(self.config, self.config.dataset)

    def dataset_directory(self) -> Path:
        """`<data_dir>/<Name>/` when it exists, else `<data_dir>`"""
        base = Path(self.config.data_dir)
        nested = base / self.config.dataset
        return nested if nested.is_dir() else base

    def load_dataset(self) -> Dataset:
        if self._dataset is None:
            directory = self.dataset_directory()
            if not directory.is_dir():
                raise DatasetNotFoundError(f"Data directory not found: {directory}")
            self._dataset = load_dataset(directory, self.config.dataset, card_dir=self.config.card_dir or None,
                                         allow_placeholder_card=self.config.allow_placeholder_card)
        return self._dataset

    def create_backend(self) -> BaseProvider:
        return BackendFactory.create_from_config(asdict(self.config.backend))

    async def classify_async(self) -> Tuple[List[SampleRecord], EvalReport]:
        dataset = self.load_dataset()
        backend = self.create_backend()
        check_zero_shot(self.config, backend)
        self.logger.info(f"Run {self.config.config_hash()} on {dataset.name}: metric={self.config.metric} "
                         f"k={self.config.k} format={self.config.format} backend={backend.backend_id}")
        try:
            return await run_experiment(self.config, dataset, backend)
        finally:
            await backend.close()

    def classify(self) -> Tuple[List[SampleRecord], EvalReport]:
        return asyncio.run(self.classify_async())

    def _sample(self, sample_id: int, split: str = "test") -> TimeSeriesSample:
        dataset = self.load_dataset()
        samples = dataset.test if split == "test" else dataset.train
        if not 0 <= sample_id < len(samples):
            raise SeriesTableError(f"{dataset.name} {split} split has no sample {sample_id} (size {len(samples)})")
        return samples[sample_id]

    def encode(self, sample_id: int, formats: Sequence[str], split: str = "test") -> Dict[str, str]:
        """Serialize one sample in each requested format"""
        dataset = self.load_dataset()
        sample = self._sample(sample_id, split)
        table = to_table(sample, table_channel_names(dataset, self.config),
                         include_time=self.config.ablation.time_column)
        return {fmt: serialize(table, TableFormat(fmt, self.config.precision)) for fmt in formats}

    @staticmethod
    def token_line(encodings: Dict[str, str]) -> str:
        return "tokens: " + " ".join(f"{fmt}={estimate_tokens(text)}" for fmt, text in encodings.items())

    def render_prompt(self, sample_id: int) -> str:
        """Fully rendered prompt for a test sample; no backend is involved"""
        dataset = self.load_dataset()
        resources = prepare_resources(dataset, self.config)
        bundle, _, _ = build_bundle(self._sample(sample_id), resources)
        return bundle.rendered
