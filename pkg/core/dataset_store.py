"""
Dataset store for seriestable - equal-length multivariate series with train/test
splits, the human-authored dataset card and per-channel training statistics.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.error_handler import DatasetCardError, DatasetError, DatasetNotFoundError
from utils.logger import data_logger as logger

STD_FLOOR = 1e-8
UNPARSED = "UNPARSED"
# header of the time column in every table encoding
TIME_COLUMN = "time"

CARD_KEYS = ("task_definition", "dataset_description", "class_definitions", "channel_descriptions")


def check_channel_names(names: Sequence[str], source: str = "<card>"):
    """Channel names must be distinct headers and must not collide with the time column"""
    stripped = [name.strip() for name in names]
    duplicates = sorted({name for name in stripped if stripped.count(name) > 1})
    if duplicates:
        raise DatasetCardError(f"{source}: duplicate channel names {duplicates}")
    if any(name.lower() == TIME_COLUMN for name in stripped):
        raise DatasetCardError(f"{source}: '{TIME_COLUMN}' is reserved for the time column")


@dataclass(frozen=True)
class TimeSeriesSample:
    """One labeled series: `values` has t rows (time steps) and m columns (channels)"""
    id: int
    values: np.ndarray
    label: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DatasetError(f"Sample {self.id}: expected a non-empty t x m matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DatasetError(f"Sample {self.id}: missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DatasetCard:
    """Contextual text for prompts: task, dataset, per-class and per-channel descriptions"""
    task_definition: str
    dataset_description: str
    class_definitions: Dict[str, str]
    channel_descriptions: Dict[str, str]
    channel_names: Optional[List[str]] = None
    placeholder: bool = False

    @classmethod
    def from_dict(cls, data: Dict, source: str = "<card>") -> "DatasetCard":
        missing = [key for key in CARD_KEYS if key not in data]
        if missing:
            raise DatasetCardError(f"{source}: card is missing keys {missing}")
        for key in ("class_definitions", "channel_descriptions"):
            if not isinstance(data[key], dict):
                raise DatasetCardError(f"{source}: '{key}' must be a mapping")
        names = data.get("channel_names")
        if names is not None and not (isinstance(names, list) and all(isinstance(n, str) for n in names)):
            raise DatasetCardError(f"{source}: 'channel_names' must be a list of strings")
        if names is not None:
            check_channel_names(names, source)
        return cls(
            task_definition=str(data["task_definition"]),
            dataset_description=str(data["dataset_description"]),
            class_definitions={str(k): str(v) for k, v in data["class_definitions"].items()},
            channel_descriptions={str(k): str(v) for k, v in data["channel_descriptions"].items()},
            channel_names=list(names) if names is not None else None,
        )

    @classmethod
    def placeholder_for(cls, name: str, classes: Sequence[str], channel_names: Sequence[str]) -> "DatasetCard":
        """Generic card used when a dataset ships without one"""
        return cls(
            task_definition=f"Classify each multivariate time series of the {name} dataset into one of its classes.",
            dataset_description=f"The {name} dataset contains equal-length series with {len(channel_names)} channels.",
            class_definitions={c: f"Series labeled '{c}'." for c in classes},
            channel_descriptions={ch: f"Measurements recorded on channel '{ch}'." for ch in channel_names},
            channel_names=list(channel_names),
            placeholder=True,
        )

    def validate(self, classes: Sequence[str], channel_names: Sequence[str], source: str = "<card>"):
        """Reject cards that do not describe every class and channel"""
        missing_classes = [c for c in classes if c not in self.class_definitions]
        if missing_classes:
            raise DatasetCardError(f"{source}: no class definition for {missing_classes}")
        missing_channels = [ch for ch in channel_names if ch not in self.channel_descriptions]
        if missing_channels:
            raise DatasetCardError(f"{source}: no channel description for {missing_channels}")


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population std pooled over every training value"""
    mean: np.ndarray
    std: np.ndarray

    @property
    def safe_std(self) -> np.ndarray:
        """Std with the divisor floor applied"""
        return np.maximum(self.std, STD_FLOOR)

    def zscore(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.safe_std


@dataclass(frozen=True)
class Dataset:
    """Immutable dataset model; safe for concurrent reads once loaded"""
    name: str
    train: Tuple[TimeSeriesSample, ...]
    test: Tuple[TimeSeriesSample, ...]
    classes: Tuple[str, ...]
    channel_names: Tuple[str, ...]
    series_length: int
    card: DatasetCard
    _stats: List[ChannelStats] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if len(self.channel_names) != self.n_channels:
            raise DatasetError(f"{self.name}: {len(self.channel_names)} channel names for {self.n_channels} channels")
        if UNPARSED in self.classes:
            raise DatasetError(f"{self.name}: '{UNPARSED}' is reserved and cannot be a class name")
        class_set = set(self.classes)
        for split_name, split in (("train", self.train), ("test", self.test)):
            for sample in split:
                if sample.values.shape != (self.series_length, self.n_channels):
                    raise DatasetError(
                        f"{self.name} {split_name} sample {sample.id}: shape {sample.values.shape}, "
                        f"expected {(self.series_length, self.n_channels)}")
                if sample.label not in class_set:
                    raise DatasetError(f"{self.name} {split_name} sample {sample.id}: unknown label '{sample.label}'")

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    @property
    def stats(self) -> ChannelStats:
        """Training ChannelStats, computed once"""
        if not self._stats:
            self._stats.append(channel_stats(self.train))
        return self._stats[0]


def channel_stats(train: Sequence[TimeSeriesSample]) -> ChannelStats:
    """Pooled per-channel mean and population standard deviation"""
    if not train:
        raise DatasetError("Cannot compute channel statistics of an empty split")
    pooled = np.concatenate([sample.values for sample in train], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)  # ddof=0
    mean.setflags(write=False)
    std.setflags(write=False)
    return ChannelStats(mean=mean, std=std)


def _find_card(directory: Path, name: str, card_dir: Optional[Path]) -> Optional[Path]:
    candidates = [directory / f"{name}_card.json"]
    if card_dir is not None:
        candidates.append(Path(card_dir) / f"{name}_card.json")
    for candidate in candidates:
        if candidate.exists():
            return candidate
    return None


def load_dataset(directory, name: str, card_dir=None, allow_placeholder_card: bool = False) -> Dataset:
    """
    Load `<name>_TRAIN.ts`, `<name>_TEST.ts` and `<name>_card.json` from a directory.

    Args:
        directory: Directory holding the split files
        name: Dataset (problem) name used as file prefix
        card_dir: Secondary directory searched for the card
        allow_placeholder_card: Substitute generic text when no card exists

    Returns:
        Validated, immutable Dataset
    """
    from core.extractors.ts_file import parse_ts_file

    directory = Path(directory)
    train_path = directory / f"{name}_TRAIN.ts"
    test_path = directory / f"{name}_TEST.ts"
    for path in (train_path, test_path):
        if not path.exists():
            raise DatasetNotFoundError(f"Dataset file not found: {path}")

    train, train_header = parse_ts_file(train_path)
    test, test_header = parse_ts_file(test_path)

    if train_header.dimensions != test_header.dimensions:
        raise DatasetError(f"{name}: TRAIN has {train_header.dimensions} dimensions, TEST has {test_header.dimensions}")
    if train_header.series_length != test_header.series_length:
        raise DatasetError(f"{name}: TRAIN length {train_header.series_length} != TEST length {test_header.series_length}")
    if set(train_header.class_labels) != set(test_header.class_labels):
        raise DatasetError(
            f"{name}: class sets differ (TRAIN {list(train_header.class_labels)}, TEST {list(test_header.class_labels)})")

    classes = tuple(train_header.class_labels)
    m = train_header.dimensions

    card_path = _find_card(directory, name, card_dir)
    if card_path is not None:
        try:
            with open(card_path, 'r', encoding='utf-8') as f:
                raw_card = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetCardError(f"{card_path}: invalid JSON ({e})")
        card = DatasetCard.from_dict(raw_card, source=str(card_path))
        channel_names = tuple(card.channel_names) if card.channel_names else tuple(f"dim_{j}" for j in range(m))
        if len(channel_names) != m:
            raise DatasetCardError(f"{card_path}: {len(channel_names)} channel names for {m} channels")
        card.validate(classes, channel_names, source=str(card_path))
    elif allow_placeholder_card:
        channel_names = tuple(f"dim_{j}" for j in range(m))
        card = DatasetCard.placeholder_for(name, classes, channel_names)
        logger.warning(f"No card for {name}; using placeholder context text")
    else:
        raise DatasetCardError(f"No {name}_card.json found in {directory}" +
                               (f" or {card_dir}" if card_dir else ""))

    dataset = Dataset(
        name=name,
        train=tuple(train),
        test=tuple(test),
        classes=classes,
        channel_names=channel_names,
        series_length=train_header.series_length,
        card=card,
    )
    _check_catalogue(dataset)
    logger.info(f"Loaded {name}: train={len(dataset.train)} test={len(dataset.test)} "
                f"m={dataset.n_channels} t={dataset.series_length} classes={len(classes)}")
    return dataset


def _check_catalogue(dataset: Dataset):
    """Warn when a catalogued dataset does not match its published statistics"""
    from core.profiles import lookup_profile

    profile = lookup_profile(dataset.name)
    if profile is None:
        return
    parsed = (len(dataset.train), len(dataset.test), dataset.n_channels, dataset.series_length, len(dataset.classes))
    if parsed != profile.statistics:
        logger.warning(f"{dataset.name}: parsed statistics {parsed} differ from catalogue {profile.statistics}")
