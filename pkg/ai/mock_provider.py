"""
Offline neighbor-oracle backend: answers with the majority label of the prompt's
positive examples, which makes the whole pipeline a kNN-majority classifier.
"""

from collections import Counter
from typing import Any, Dict, Optional

from ai.base_provider import BaseProvider, Completion, CompletionRequest
from ai.prompt_builder import PromptBundle
from utils.error_handler import BackendError


def oracle_label(bundle: PromptBundle) -> str:
    """
    Majority label of the positive examples. Among tied labels the one with the
    smallest best rank wins; no positives falls back to the first class.
    """
    positives = bundle.positives
    if not positives:
        if not bundle.classes:
            raise BackendError("Mock backend needs either examples or a class list")
        return bundle.classes[0]
    votes = Counter(e.label for e in positives)
    best_rank: Dict[str, int] = {}
    for example in positives:
        best_rank[example.label] = min(example.rank, best_rank.get(example.label, example.rank))
    top = max(votes.values())
    return min((label for label, count in votes.items() if count == top), key=lambda label: best_rank[label])


class MockProvider(BaseProvider):
    """Deterministic backend, independent of temperature and call count"""

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__(config or {})

    @property
    def backend_id(self) -> str:
        return "mock"

    async def complete(self, request: CompletionRequest) -> Completion:
        self.check_budget(request)
        return Completion(text=f"Label: {oracle_label(request.bundle)}", backend_id=self.backend_id)
