"""
Tests for completion backends: the offline oracle and the HTTP chat client
"""

import asyncio
import logging

import pytest
from aiohttp import web
from aiohttp.test_utils import TestServer

from ai.base_provider import CompletionRequest
from ai.http_chat_provider import HttpChatProvider
from ai.mock_provider import MockProvider, oracle_label
from ai.provider_factory import BackendFactory
from core.dataset_store import UNPARSED
from services.ensemble_service import majority_vote, run_multi_path
from tests.helpers import make_bundle
from utils.error_handler import (BackendAuthError, BackendConfigError, BackendError, BackendNetworkError,
                                 BackendTimeoutError, ContextLengthError)

CHAT_PATH = "/v1/chat/completions"


def chat_body(content: str) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 5},
    }


class StubChatServer:
    """Local endpoint replaying scripted (status, body) responses; the last one repeats"""

    def __init__(self, responses, delay: float = 0.0):
        self.responses = list(responses)
        self.delay = delay
        self.requests = []
        self.server = None

    async def handle(self, request: web.Request) -> web.Response:
        self.requests.append({'json': await request.json(), 'headers': dict(request.headers)})
        if self.delay:
            await asyncio.sleep(self.delay)
        status, body = self.responses[min(len(self.requests), len(self.responses)) - 1]
        if isinstance(body, str):
            return web.Response(status=status, text=body)
        return web.json_response(body, status=status)

    @property
    def url(self) -> str:
        return str(self.server.make_url(CHAT_PATH))

    async def __aenter__(self):
        app = web.Application()
        app.router.add_post(CHAT_PATH, self.handle)
        self.server = TestServer(app)
        await self.server.start_server()
        return self

    async def __aexit__(self, *exc):
        await self.server.close()


def http_provider(url: str, **overrides) -> HttpChatProvider:
    config = {'url': url, 'api_key': 'test-key', 'model': 'stub-model', 'retry_base_seconds': 0.01,
              'max_attempts': 3, 'timeout': 5}
    config.update(overrides)
    return HttpChatProvider(config)


class TestMockProvider:

    @pytest.mark.parametrize("labels,expected", [
        (["a"], "a"),
        (["a", "b", "b"], "b"),
        (["b", "a"], "b"),
        (["a", "b", "b", "a"], "a"),
        (["c", "a", "b", "a", "b"], "a"),
    ])
    def test_oracle_label(self, labels, expected):
        """Test the mock answers the majority label of its positives"""
        assert oracle_label(make_bundle(labels)) == expected

    def test_no_examples_falls_back_to_first_class(self):
        """Test the mock falls back to the first class"""
        assert oracle_label(make_bundle([], classes=("b", "a"))) == "b"

    def test_negatives_do_not_vote(self):
        """Test negatives never vote in the mock"""
        assert oracle_label(make_bundle(["a"], negative_labels=["b", "b"])) == "a"

    @pytest.mark.asyncio
    async def test_same_answer_at_every_temperature(self):
        """Test the mock ignores temperature"""
        provider = MockProvider()
        bundle = make_bundle(["c", "c", "a"])
        texts = {(await provider.complete(CompletionRequest(bundle, temperature=t))).text
                 for t in (0.0, 0.5, 1.0, 2.0)}
        assert texts == {"Label: c"}

    def test_invalid_temperature(self):
        """Test temperatures outside [0, 2] are rejected"""
        with pytest.raises(BackendError):
            CompletionRequest(make_bundle(["a"]), temperature=2.5)


class TestBackendFactory:

    def test_creates_mock(self):
        """Test the factory builds the mock"""
        assert BackendFactory.create_from_config({'type': 'mock'}).backend_id == "mock"

    def test_unknown_type(self):
        """Test the factory names the valid backends"""
        with pytest.raises(BackendConfigError, match="mock, http"):
            BackendFactory.create_provider("grpc", {})

    def test_http_requires_url(self, monkeypatch):
        """Test the HTTP backend needs an endpoint"""
        monkeypatch.delenv("TT_API_URL", raising=False)
        with pytest.raises(BackendConfigError):
            BackendFactory.create_from_config({'type': 'http'})


class TestHttpChatProvider:

    @pytest.fixture
    def bundle(self):
        return make_bundle(["a", "b"])

    @pytest.mark.asyncio
    async def test_returns_canned_content(self, bundle):
        """Test a canned completion comes back with usage"""
        async with StubChatServer([(200, chat_body("thinking...\nLabel: a"))]) as stub:
            completion = await http_provider(stub.url).complete(CompletionRequest(bundle, temperature=0.0))
        assert completion.text == "thinking...\nLabel: a"
        assert completion.attempts == 1
        assert completion.usage == {"prompt_tokens": 10, "completion_tokens": 5}
        assert completion.backend_id == "http:stub-model"

    @pytest.mark.asyncio
    async def test_wire_payload(self, bundle):
        """Test the request body and headers"""
        async with StubChatServer([(200, chat_body("Label: a"))]) as stub:
            await http_provider(stub.url).complete(CompletionRequest(bundle, temperature=0.0, max_tokens=64))
        sent = stub.requests[0]['json']
        assert sent['temperature'] == 0.0
        assert isinstance(sent['temperature'], float)
        assert sent['max_tokens'] == 64
        assert sent['model'] == "stub-model"
        assert sent['messages'] == [{'role': 'user', 'content': bundle.user_text}]
        assert stub.requests[0]['headers']['Authorization'] == "Bearer test-key"

    @pytest.mark.asyncio
    async def test_retries_rate_limit(self, bundle, caplog):
        """Test a rate limit is retried and logged once with the prompt hash"""
        responses = [(429, {"error": "slow down"}), (200, chat_body("Label: b"))]
        caplog.set_level(logging.INFO, logger="seriestable")
        async with StubChatServer(responses) as stub:
            completion = await http_provider(stub.url).complete(CompletionRequest(bundle))
        assert completion.text == "Label: b"
        assert completion.attempts == 2
        assert len(stub.requests) == 2
        hash_lines = [r for r in caplog.records if f"prompt={bundle.prompt_hash}" in r.getMessage()]
        assert len(hash_lines) == 1
        assert hash_lines[0].levelno == logging.INFO

    @pytest.mark.asyncio
    async def test_missing_key_fails_before_network(self, bundle, monkeypatch):
        """Test a missing key fails before any request"""
        monkeypatch.delenv("TT_API_KEY", raising=False)
        async with StubChatServer([(200, chat_body("Label: a"))]) as stub:
            with pytest.raises(BackendAuthError):
                await http_provider(stub.url, api_key=None).complete(CompletionRequest(bundle))
        assert stub.requests == []

    @pytest.mark.asyncio
    async def test_rejected_key_is_not_retried(self, bundle):
        """Test rejected credentials are not retried"""
        async with StubChatServer([(401, {"error": "bad key"})]) as stub:
            with pytest.raises(BackendAuthError):
                await http_provider(stub.url).complete(CompletionRequest(bundle))
        assert len(stub.requests) == 1

    @pytest.mark.asyncio
    async def test_server_errors_exhaust_attempts(self, bundle):
        """Test server errors are retried up to the attempt limit"""
        async with StubChatServer([(503, "unavailable")]) as stub:
            with pytest.raises(BackendNetworkError, match="3 attempts"):
                await http_provider(stub.url).complete(CompletionRequest(bundle))
        assert len(stub.requests) == 3

    @pytest.mark.asyncio
    async def test_context_length_rejection(self, bundle):
        """Test a context-length rejection is not retried"""
        async with StubChatServer([(400, {"error": "This model's maximum context length is 8192"})]) as stub:
            with pytest.raises(ContextLengthError):
                await http_provider(stub.url).complete(CompletionRequest(bundle))
        assert len(stub.requests) == 1

    @pytest.mark.asyncio
    async def test_timeout(self, bundle):
        """Test a slow endpoint times out"""
        async with StubChatServer([(200, chat_body("Label: a"))], delay=0.5) as stub:
            with pytest.raises(BackendTimeoutError):
                await http_provider(stub.url, timeout=0.1, max_attempts=2).complete(CompletionRequest(bundle))

    @pytest.mark.asyncio
    async def test_malformed_body(self, bundle):
        """Test a body without choices is a backend error"""
        async with StubChatServer([(200, {"unexpected": True})]) as stub:
            with pytest.raises(BackendError, match="Malformed"):
                await http_provider(stub.url).complete(CompletionRequest(bundle))

    @pytest.mark.asyncio
    async def test_non_json_body(self, bundle):
        """Test an HTML page behind a 200 status is a backend error and is not retried"""
        async with StubChatServer([(200, "<html>502 bad gateway</html>")]) as stub:
            with pytest.raises(BackendError, match="not JSON"):
                await http_provider(stub.url).complete(CompletionRequest(bundle))
            assert len(stub.requests) == 1

    @pytest.mark.asyncio
    async def test_non_json_body_is_an_unparsed_path(self, bundle):
        """Test one garbled answer costs a single path, not the sample"""
        responses = [(200, "<html>502 bad gateway</html>"), (200, chat_body("Label: a"))]
        async with StubChatServer(responses) as stub:
            paths = await run_multi_path(bundle, [0.0, 0.5], http_provider(stub.url))
        assert sorted(p.extracted for p in paths) == sorted([UNPARSED, "a"])
        failed = [p for p in paths if p.error]
        assert len(failed) == 1
        assert failed[0].error.startswith("BackendError:")
        assert majority_vote(paths).final_label == "a"

    def test_system_message_carries_context(self, toy_dataset):
        """Test the context goes in the system message"""
        from ai.prompt_builder import assemble_prompt, build_context, build_instruction

        bundle = assemble_prompt(build_context(toy_dataset.card, toy_dataset), [], "query",
                                 build_instruction(toy_dataset.classes), classes=toy_dataset.classes)
        messages = http_provider("http://127.0.0.1:1/unused").build_messages(CompletionRequest(bundle))
        assert [m['role'] for m in messages] == ["system", "user"]
        assert messages[0]['content'] == bundle.system_text
