from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional

from ai.prompt_builder import PromptBundle
from core.encoding.table_encoder import estimate_tokens
from utils.error_handler import BackendError
from utils.logger import ai_logger as logger


@dataclass(frozen=True)
class CompletionRequest:
    bundle: PromptBundle
    temperature: float = 0.0
    max_tokens: int = 1024
    model_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise BackendError(f"temperature must be within [0, 2], got {self.temperature}")
        if self.max_tokens <= 0:
            raise BackendError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class Completion:
    text: str
    backend_id: str
    latency: float = 0.0
    usage: Optional[Dict[str, int]] = None
    attempts: int = 1


class BaseProvider(ABC):
    """Base class for completion backends"""

    def __init__(self, config: Dict[str, Any]):
        """Initialize provider with configuration"""
        self.config = config
        self.context_budget = int(config.get('context_budget', 0) or 0)

    @property
    @abstractmethod
    def backend_id(self) -> str:
        """Identifier recorded on every Completion"""
        pass

    @abstractmethod
    async def complete(self, request: CompletionRequest) -> Completion:
        """Generate text for the request's prompt"""
        pass

    def check_budget(self, request: CompletionRequest) -> int:
        """Warn when the prompt estimate exceeds the context budget; returns the estimate"""
        tokens = estimate_tokens(request.bundle.rendered)
        if self.context_budget and tokens > self.context_budget:
            logger.warning(f"Prompt {request.bundle.prompt_hash} estimated at {tokens} tokens, "
                           f"over the {self.context_budget}-token context budget of {self.backend_id}")
        return tokens

    async def close(self):
        """Release resources held by the backend"""
        pass
