from __future__ import annotations

import base64
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from chartforge import gateway
from chartforge.gateway import (
    AuthFailedError,
    ChatCompletion,
    ChatMessage,
    ChatRequest,
    HttpProvider,
    ImagePart,
    MockExhaustedError,
    MockProvider,
    RateLimitedError,
    TextPart,
    TransportError,
    complete,
    mock_provider,
    request_from_wire,
    request_to_wire,
)


def simple_request(text: str = "hello") -> ChatRequest:
    return ChatRequest(model_name="m", messages=(gateway.user(text),))


class TestTypes:
    def test_zero_messages_rejected_before_any_network(self):
        with pytest.raises(ValueError, match="at least one message"):
            ChatRequest(model_name="m", messages=())

    def test_user_message_required(self):
        with pytest.raises(ValueError, match="user message"):
            ChatRequest(model_name="m", messages=(gateway.system("s"),))

    def test_system_must_come_first(self):
        with pytest.raises(ValueError, match="system"):
            ChatRequest(
                model_name="m", messages=(gateway.user("u"), gateway.system("s"))
            )

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            ChatRequest(model_name="m", messages=(gateway.user("u"),), temperature=-0.5)

    def test_empty_content_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            ChatMessage(role="user", parts=())

    def test_invalid_base64_rejected(self):
        with pytest.raises(ValueError, match="base64"):
            ImagePart(media_type="image/png", data_b64="not base64!!")

    def test_stop_completion_requires_text(self):
        with pytest.raises(ValueError, match="must have text"):
            ChatCompletion(text="", finish_reason="stop")


class TestWireFormat:
    def test_text_round_trip(self):
        request = ChatRequest(
            model_name="gpt-4o-mini",
            messages=(gateway.system("sys"), gateway.user("usr")),
            temperature=0.0,
            max_output_tokens=128,
        )
        assert request_from_wire(request_to_wire(request)) == request

    def test_image_round_trip_uses_data_urls(self, tiny_png):
        request = ChatRequest(
            model_name="m",
            messages=(gateway.user_with_images([tiny_png], text="look"),),
        )
        wire = request_to_wire(request)
        url = wire["messages"][0]["content"][1]["image_url"]["url"]
        assert url.startswith("data:image/png;base64,")
        assert base64.b64decode(url.split(",", 1)[1]) == tiny_png
        assert request_from_wire(wire) == request


class TestMockProvider:
    def test_ordered_replay(self):
        provider = mock_provider(["a", "b"])
        assert complete(simple_request(), provider).text == "a"
        assert complete(simple_request(), provider).text == "b"

    def test_exhaustion_is_an_error(self):
        provider = mock_provider(["x", "y"])
        complete(simple_request(), provider)
        complete(simple_request(), provider)
        with pytest.raises(MockExhaustedError):
            complete(simple_request(), provider)

    def test_empty_script_first_call_fails(self):
        with pytest.raises(MockExhaustedError):
            complete(simple_request(), mock_provider([]))

    def test_scripted_echo(self):
        provider = mock_provider(["print(1)"])
        completion = complete(simple_request(), provider)
        assert completion.text == "print(1)"
        assert completion.finish_reason == "stop"

    def test_scripted_exception_is_raised(self):
        provider = mock_provider([TransportError("boom")])
        with pytest.raises(TransportError, match="boom"):
            complete(simple_request(), provider)

    def test_each_reply_delivered_exactly_once_across_workers(self):
        script = [f"reply-{i}" for i in range(10)]
        provider = MockProvider(script)
        with ThreadPoolExecutor(max_workers=4) as pool:
            replies = list(
                pool.map(lambda _: complete(simple_request(), provider).text, range(10))
            )
        assert sorted(replies) == sorted(script)
        assert len(set(replies)) == 10


class TestDeterministicMock:
    def test_same_request_same_reply(self):
        provider = gateway.DeterministicMockProvider()
        first = complete(simple_request("draw a chart"), provider)
        second = complete(simple_request("draw a chart"), provider)
        assert first == second

    def test_different_requests_differ(self):
        provider = gateway.DeterministicMockProvider()
        a = complete(simple_request("chart one"), provider)
        b = complete(simple_request("chart two"), provider)
        assert a != b


class _FakeTransport:
    """Scripted (status, payload) responses; entries may be exceptions."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def __call__(self, url, headers, body, timeout):
        self.calls += 1
        assert self.responses, "transport script exhausted"
        entry = self.responses.pop(0)
        if isinstance(entry, Exception):
            raise entry
        return entry


def _ok_payload(text="hi"):
    return {
        "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 5},
    }


class TestHttpProvider:
    def _provider(self, transport, sleeps):
        return HttpProvider(
            endpoint="https://example.test/v1",
            api_key="k",
            transport=transport,
            sleeper=sleeps.append,
        )

    def test_success_parses_choice_and_usage(self):
        transport = _FakeTransport([(200, _ok_payload("done"))])
        completion = complete(simple_request(), self._provider(transport, []))
        assert completion.text == "done"
        assert completion.usage == (3, 5)

    def test_auth_failure_never_retried(self):
        transport = _FakeTransport([(401, {})])
        sleeps: list = []
        with pytest.raises(AuthFailedError):
            complete(simple_request(), self._provider(transport, sleeps))
        assert transport.calls == 1
        assert sleeps == []

    def test_rate_limit_backs_off_then_surfaces(self):
        transport = _FakeTransport([(429, {})] * 5)
        sleeps: list = []
        with pytest.raises(RateLimitedError):
            complete(simple_request(), self._provider(transport, sleeps))
        assert transport.calls == 5
        assert sleeps == [1.0, 2.0, 4.0, 8.0]

    def test_transport_errors_retried_then_surface(self):
        transport = _FakeTransport([ConnectionError("nope")] * 5)
        sleeps: list = []
        with pytest.raises(TransportError):
            complete(simple_request(), self._provider(transport, sleeps))
        assert transport.calls == 5

    def test_client_error_is_terminal(self):
        transport = _FakeTransport([(400, {"error": "bad request"})])
        sleeps: list = []
        with pytest.raises(TransportError, match="400"):
            complete(simple_request(), self._provider(transport, sleeps))
        assert transport.calls == 1

    def test_recovery_after_one_rate_limit(self):
        transport = _FakeTransport([(429, {}), (200, _ok_payload())])
        sleeps: list = []
        completion = complete(simple_request(), self._provider(transport, sleeps))
        assert completion.text == "hi"
        assert sleeps == [1.0]

    def test_from_env_requires_key(self, monkeypatch):
        monkeypatch.delenv(gateway.API_KEY_ENV, raising=False)
        with pytest.raises(AuthFailedError):
            HttpProvider.from_env()

    def test_in_flight_limit_is_enforced(self):
        peak = {"now": 0, "max": 0}
        lock = threading.Lock()

        def transport(url, headers, body, timeout):
            with lock:
                peak["now"] += 1
                peak["max"] = max(peak["max"], peak["now"])
            threading.Event().wait(0.02)
            with lock:
                peak["now"] -= 1
            return 200, _ok_payload()

        provider = HttpProvider(
            endpoint="https://example.test", api_key="k",
            transport=transport, max_in_flight=2,
        )
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(lambda _: complete(simple_request(), provider), range(8)))
        assert peak["max"] <= 2
