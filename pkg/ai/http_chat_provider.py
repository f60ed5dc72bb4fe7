import asyncio
import os
import time
from typing import Any, Dict, List, Optional

import aiohttp
import backoff

from .base_provider import BaseProvider, Completion, CompletionRequest
from utils.error_handler import (BackendAuthError, BackendConfigError, BackendError, BackendNetworkError,
                                 BackendTimeoutError, ContextLengthError, TransientBackendError)
from utils.logger import ai_logger as logger

RETRYABLE_STATUS = {408, 409, 429}
CONTEXT_LENGTH_MARKERS = ("context_length", "context length", "maximum context", "too many tokens", "too long")


class HttpChatProvider(BaseProvider):
    """Remote chat-completion backend speaking the messages/temperature/max_tokens JSON protocol"""

    def __init__(self, config: Dict[str, Any]):
        super().__init__(config)
        self.url = (config.get('url') or os.getenv('TT_API_URL') or '').strip()
        self.api_key = config.get('api_key') or os.getenv('TT_API_KEY')
        self.model = config.get('model') or os.getenv('TT_MODEL') or ''
        self.max_tokens = int(config.get('max_tokens', 1024))
        self.timeout = float(config.get('timeout', 120))
        self.max_attempts = int(config.get('max_attempts', 3))
        self.retry_base_seconds = float(config.get('retry_base_seconds', 1.0))
        self._semaphore = asyncio.Semaphore(int(config.get('max_in_flight', 4)))

        if not self.url:
            raise BackendConfigError("HTTP backend needs an endpoint URL (backend.url or TT_API_URL)")
        if self.max_attempts < 1:
            raise BackendConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")

        self._send_with_retry = backoff.on_exception(
            backoff.expo,
            TransientBackendError,
            max_tries=self.max_attempts,
            factor=self.retry_base_seconds,
            jitter=None,
            on_backoff=self._log_retry,
        )(self._send_once)

    @property
    def backend_id(self) -> str:
        return f"http:{self.model}" if self.model else "http"

    @staticmethod
    def _log_retry(details: Dict[str, Any]):
        error = details.get('exception')
        logger.warning(f"Transient backend failure ({error}); retry {details['tries']} "
                       f"in {details['wait']:.2f}s")

    def build_messages(self, request: CompletionRequest) -> List[Dict[str, str]]:
        """Context block in the system role, the rest of the prompt in the user role"""
        messages = []
        system_text = request.bundle.system_text
        if system_text:
            messages.append({'role': 'system', 'content': system_text})
        messages.append({'role': 'user', 'content': request.bundle.user_text})
        return messages

    def build_payload(self, request: CompletionRequest) -> Dict[str, Any]:
        return {
            'model': request.model_id or self.model,
            'messages': self.build_messages(request),
            'temperature': request.temperature,
            'max_tokens': request.max_tokens,
        }

    async def _send_once(self, payload: Dict[str, Any], state: Dict[str, int]) -> Dict[str, Any]:
        """One POST; maps failures onto the backend error taxonomy"""
        state['attempts'] += 1
        headers = {
            'Authorization': f"Bearer {self.api_key}",
            'Content-Type': 'application/json'
        }
        try:
            async with aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=self.timeout)) as session:
                async with session.post(self.url, headers=headers, json=payload) as response:
                    if response.status == 200:
                        try:
                            return await response.json(content_type=None)
                        except ValueError as e:
                            raise BackendError(f"Malformed chat-completion response: body is not JSON ({e})")
                    body = await response.text()
                    self._raise_for_status(response.status, body)
        except asyncio.TimeoutError:
            raise TransientBackendError(f"Request timed out after {self.timeout}s", status=408)
        except aiohttp.ClientError as e:
            raise TransientBackendError(f"Connection failed: {e}")

    @staticmethod
    def _raise_for_status(status: int, body: str):
        snippet = body[:200]
        if status in (401, 403):
            raise BackendAuthError(f"Backend rejected credentials ({status}): {snippet}")
        if status == 413 or (status == 400 and any(m in body.lower() for m in CONTEXT_LENGTH_MARKERS)):
            raise ContextLengthError(f"Backend rejected the prompt length ({status}): {snippet}")
        if status in RETRYABLE_STATUS or status >= 500:
            raise TransientBackendError(f"Backend returned {status}: {snippet}", status=status)
        raise BackendError(f"Backend returned {status}: {snippet}")

    @staticmethod
    def _extract_text(data: Dict[str, Any]) -> str:
        try:
            text = data['choices'][0]['message']['content']
        except (KeyError, IndexError, TypeError):
            raise BackendError("Malformed chat-completion response: no choices[0].message.content")
        if not text:
            raise BackendError("Backend returned an empty completion")
        return text

    async def complete(self, request: CompletionRequest) -> Completion:
        """
        Send the prompt and return the generated text.

        Transient failures (408/409/429/5xx, dropped connections, timeouts) are retried with
        exponential backoff; exactly one INFO line per call carries the prompt hash.

        Raises:
            BackendAuthError: missing or rejected API key
            ContextLengthError: prompt rejected as too long
            BackendTimeoutError: timed out on every attempt
            BackendNetworkError: other transient failures on every attempt
        """
        prompt_hash = request.bundle.prompt_hash
        if not self.api_key:
            logger.info(f"prompt={prompt_hash} backend={self.backend_id} status=auth-error")
            raise BackendAuthError("No API key configured (backend.api_key or TT_API_KEY)")
        tokens = self.check_budget(request)
        payload = self.build_payload(request)
        state = {'attempts': 0}
        start = time.perf_counter()
        try:
            async with self._semaphore:
                data = await self._send_with_retry(payload, state)
            text = self._extract_text(data)
        except TransientBackendError as e:
            latency = time.perf_counter() - start
            logger.info(f"prompt={prompt_hash} backend={self.backend_id} T={request.temperature} "
                        f"status=failed attempts={state['attempts']} latency={latency:.2f}s")
            if e.status == 408:
                raise BackendTimeoutError(f"Timed out after {state['attempts']} attempts: {e}")
            raise BackendNetworkError(f"Gave up after {state['attempts']} attempts: {e}")
        except BackendError as e:
            logger.info(f"prompt={prompt_hash} backend={self.backend_id} T={request.temperature} "
                        f"status=failed attempts={state['attempts']} error={type(e).__name__}")
            raise

        latency = time.perf_counter() - start
        usage: Optional[Dict[str, int]] = data.get('usage') if isinstance(data.get('usage'), dict) else None
        logger.info(f"prompt={prompt_hash} backend={self.backend_id} T={request.temperature} status=ok "
                    f"attempts={state['attempts']} latency={latency:.2f}s est_tokens={tokens}")
        return Completion(text=text, backend_id=self.backend_id, latency=latency, usage=usage,
                          attempts=state['attempts'])
