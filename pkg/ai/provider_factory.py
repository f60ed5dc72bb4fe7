from typing import Any, Dict

from .base_provider import BaseProvider
from .http_chat_provider import HttpChatProvider
from .mock_provider import MockProvider
from utils.error_handler import BackendConfigError

BACKEND_TYPES = ("mock", "http")


class BackendFactory:
    """Factory for creating completion backends"""

    @staticmethod
    def create_provider(provider_type: str, config: Dict[str, Any]) -> BaseProvider:
        """Create and return a backend instance"""
        if provider_type == "mock":
            return MockProvider(config)
        elif provider_type == "http":
            return HttpChatProvider(config)
        else:
            raise BackendConfigError(f"Unsupported backend type: {provider_type}. Valid types: {', '.join(BACKEND_TYPES)}")

    @staticmethod
    def create_from_config(config: Dict[str, Any]) -> BaseProvider:
        """Create backend from a `backend` config section"""
        return BackendFactory.create_provider(config.get('type', 'mock'), config)
