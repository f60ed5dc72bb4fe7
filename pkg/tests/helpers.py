"""
Shared builders for tests: synthetic datasets, bundles, scripted backends and a
kNN-majority reference classifier written independently of the pipeline.
"""

import json
from collections import Counter
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ai.base_provider import BaseProvider, Completion, CompletionRequest
from ai.prompt_builder import NEGATIVE, POSITIVE, ExampleBlock, PromptBundle, assemble_prompt, build_instruction
from core.dataset_store import TimeSeriesSample
from core.extractors.ts_file import TsHeader, write_ts_file

TOY_NAME = "Toy"
TOY_CLASSES = ("a", "b", "c")


def make_samples(rng: np.random.Generator, n_per_class: int, classes: Sequence[str] = TOY_CLASSES,
                 length: int = 8, channels: int = 2, noise: float = 0.4) -> List[TimeSeriesSample]:
    """Class-dependent sine patterns plus noise, interleaved by class"""
    samples = []
    steps = np.arange(length)
    for _ in range(n_per_class):
        for c_idx, label in enumerate(classes):
            base = np.stack([np.sin(steps / 2.0 + c_idx * 1.3 + j) for j in range(channels)], axis=1) * (1 + c_idx)
            values = np.round(base + rng.normal(0.0, noise, size=base.shape), 3)
            samples.append(TimeSeriesSample(id=len(samples), values=values, label=label))
    return samples


def toy_card(classes: Sequence[str], channel_names: Sequence[str], include_names: bool = False) -> Dict:
    card = {
        "task_definition": "Assign the series to one of the toy classes.",
        "dataset_description": f"Synthetic sine patterns with {len(channel_names)} channels.",
        "class_definitions": {c: f"Pattern number {i + 1}." for i, c in enumerate(classes)},
        "channel_descriptions": {ch: f"Synthetic channel {ch}." for ch in channel_names},
    }
    if include_names:
        card["channel_names"] = list(channel_names)
    return card


def write_dataset(directory: Path, name: str, train: Sequence[TimeSeriesSample], test: Sequence[TimeSeriesSample],
                  classes: Sequence[str], card: Optional[Dict] = None, test_classes: Optional[Sequence[str]] = None
                  ) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shape = dict(dimensions=train[0].n_channels, series_length=train[0].length)
    write_ts_file(directory / f"{name}_TRAIN.ts", train, TsHeader(name, class_labels=tuple(classes), **shape))
    write_ts_file(directory / f"{name}_TEST.ts", test,
                  TsHeader(name, class_labels=tuple(test_classes or classes), **shape))
    if card is not None:
        (directory / f"{name}_card.json").write_text(json.dumps(card, indent=2), encoding='utf-8')
    return directory


def make_bundle(labels: Sequence[str], classes: Sequence[str] = TOY_CLASSES,
                negative_labels: Sequence[str] = ()) -> PromptBundle:
    """Bundle with placeholder tables; positives ranked in the given order"""
    examples = [ExampleBlock(POSITIVE, f"table {i}", label, i, train_index=i - 1)
                for i, label in enumerate(labels, start=1)]
    examples += [ExampleBlock(NEGATIVE, f"negative {i}", label, i) for i, label in enumerate(negative_labels, start=1)]
    return assemble_prompt(None, examples, "query table", build_instruction(classes), classes=classes)


class ScriptedBackend(BaseProvider):
    """Answers by temperature; an Exception value is raised instead of returned"""

    def __init__(self, script: Dict[float, object], default: object = "no idea"):
        super().__init__({})
        self.script = script
        self.default = default
        self.calls: List[CompletionRequest] = []

    @property
    def backend_id(self) -> str:
        return "scripted"

    async def complete(self, request: CompletionRequest) -> Completion:
        self.calls.append(request)
        answer = self.script.get(request.temperature, self.default)
        if isinstance(answer, Exception):
            raise answer
        return Completion(text=str(answer), backend_id=self.backend_id)


def manhattan(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).sum())


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(((a - b) ** 2).sum()))


def dtw_table(a: np.ndarray, b: np.ndarray) -> float:
    """Plain O(t*u) dynamic program over Python loops"""
    t, u = len(a), len(b)
    acc = [[float("inf")] * (u + 1) for _ in range(t + 1)]
    acc[0][0] = 0.0
    for i in range(1, t + 1):
        for j in range(1, u + 1):
            cost = float(np.sqrt(((a[i - 1] - b[j - 1]) ** 2).sum()))
            acc[i][j] = cost + min(acc[i - 1][j - 1], acc[i - 1][j], acc[i][j - 1])
    return acc[t][u]


def knn_majority(train: Sequence[TimeSeriesSample], query: TimeSeriesSample,
                 dist: Callable[[np.ndarray, np.ndarray], float], k: int) -> str:
    """Majority of the k nearest labels; ties go to the tied label seen first in rank order"""
    scored = sorted((dist(query.values, s.values), s.id, s.label) for s in train)
    labels = [label for _, _, label in scored[:k]]
    counts = Counter(labels)
    top = max(counts.values())
    for label in labels:
        if counts[label] == top:
            return label
    raise AssertionError("unreachable")
