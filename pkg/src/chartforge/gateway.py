"""Provider-agnostic chat-completion client.

The wire format is the OpenAI ``/chat/completions`` schema; any endpoint
speaking it can sit behind ``HttpProvider``.  ``MockProvider`` replays a
scripted list of completions for hermetic tests, and
``DeterministicMockProvider`` derives a completion from the request content
so parallel suite runs stay byte-stable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field

log = logging.getLogger("chartforge.gateway")

API_KEY_ENV = "CHARTFORGE_API_KEY"
API_BASE_ENV = "CHARTFORGE_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"

SYSTEM = "system"
USER = "user"
ASSISTANT = "assistant"
_ROLES = (SYSTEM, USER, ASSISTANT)

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 4096
MAX_ATTEMPTS = 5
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0
DEFAULT_MAX_IN_FLIGHT = 4


class GatewayError(Exception):
    """Base class for completion failures."""


class TransportError(GatewayError):
    pass


class RateLimitedError(GatewayError):
    pass


class AuthFailedError(GatewayError):
    pass


class MockExhaustedError(GatewayError):
    pass


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    media_type: str
    data_b64: str

    def __post_init__(self) -> None:
        try:
            base64.b64decode(self.data_b64, validate=True)
        except Exception as exc:
            raise ValueError("image part payload is not valid base64") from exc

    @classmethod
    def from_bytes(cls, data: bytes, media_type: str = "image/png") -> "ImagePart":
        return cls(media_type=media_type, data_b64=base64.b64encode(data).decode("ascii"))

    @property
    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{self.data_b64}"


Part = TextPart | ImagePart


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.parts:
            raise ValueError("message content must be non-empty")

    @property
    def text(self) -> str:
        """Concatenated text of all text parts."""
        return "".join(p.text for p in self.parts if isinstance(p, TextPart))


def system(text: str) -> ChatMessage:
    return ChatMessage(SYSTEM, (TextPart(text),))


def user(text: str) -> ChatMessage:
    return ChatMessage(USER, (TextPart(text),))


def assistant(text: str) -> ChatMessage:
    return ChatMessage(ASSISTANT, (TextPart(text),))


def user_with_images(images: list[bytes], text: str | None = None) -> ChatMessage:
    parts: list[Part] = [TextPart(text)] if text else []
    parts.extend(ImagePart.from_bytes(img) for img in images)
    return ChatMessage(USER, tuple(parts))


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[ChatMessage, ...]
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if not self.messages:
            raise ValueError("request must carry at least one message")
        for i, msg in enumerate(self.messages):
            if msg.role == SYSTEM and i != 0:
                raise ValueError("a system message must come first")
        if not any(m.role == USER for m in self.messages):
            raise ValueError("request must carry at least one user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatCompletion:
    text: str
    finish_reason: str = FINISH_STOP
    usage: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.finish_reason not in (FINISH_STOP, FINISH_LENGTH, FINISH_ERROR):
            raise ValueError(f"unknown finish reason {self.finish_reason!r}")
        if self.finish_reason == FINISH_STOP and not self.text:
            raise ValueError("a completion that stopped normally must have text")


# --- wire format -----------------------------------------------------------

def _part_to_wire(part: Part) -> dict:
    if isinstance(part, TextPart):
        return {"type": "text", "text": part.text}
    return {"type": "image_url", "image_url": {"url": part.data_url}}


def _part_from_wire(raw: dict) -> Part:
    if raw.get("type") == "text":
        return TextPart(raw["text"])
    if raw.get("type") == "image_url":
        url = raw["image_url"]["url"]
        prefix, _, payload = url.partition(";base64,")
        if not prefix.startswith("data:") or not payload:
            raise ValueError(f"unsupported image url {url[:40]!r}")
        return ImagePart(media_type=prefix[len("data:"):], data_b64=payload)
    raise ValueError(f"unsupported content part {raw!r}")


def request_to_wire(request: ChatRequest) -> dict:
    messages = []
    for msg in request.messages:
        if len(msg.parts) == 1 and isinstance(msg.parts[0], TextPart):
            content: str | list = msg.parts[0].text
        else:
            content = [_part_to_wire(p) for p in msg.parts]
        messages.append({"role": msg.role, "content": content})
    return {
        "model": request.model_name,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }


def request_from_wire(raw: dict) -> ChatRequest:
    messages = []
    for msg in raw["messages"]:
        content = msg["content"]
        if isinstance(content, str):
            parts: tuple[Part, ...] = (TextPart(content),)
        else:
            parts = tuple(_part_from_wire(p) for p in content)
        messages.append(ChatMessage(role=msg["role"], parts=parts))
    return ChatRequest(
        model_name=raw["model"],
        messages=tuple(messages),
        temperature=raw.get("temperature", DEFAULT_TEMPERATURE),
        max_output_tokens=raw.get("max_tokens", DEFAULT_MAX_OUTPUT_TOKENS),
    )


# --- providers --------------------------------------------------------------

class ProviderHandle:
    """Base provider: a token bucket bounds concurrent in-flight requests."""

    def __init__(self, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT):
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @property
    def name(self) -> str:
        return type(self).__name__

    def send(self, request: ChatRequest) -> ChatCompletion:
        raise NotImplementedError


def complete(request: ChatRequest, provider: ProviderHandle) -> ChatCompletion:
    """Send one chat request, returning the provider's first choice."""
    started = time.monotonic()
    with provider._slots:
        completion = provider.send(request)
    log.debug(
        "completion from %s in %.2fs (usage=%s)",
        provider.name, time.monotonic() - started, completion.usage,
    )
    return completion


class MockProvider(ProviderHandle):
    """Replays a scripted list of completions, each exactly once.

    Script entries may be strings, ChatCompletion values, or exceptions to
    raise.  Exhaustion is an error, never silent reuse.
    """

    def __init__(self, script: list, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT):
        super().__init__(max_in_flight)
        self._script = list(script)
        self._lock = threading.Lock()
        self._cursor = 0
        self.requests: list[ChatRequest] = []

    @property
    def calls(self) -> int:
        return self._cursor

    def send(self, request: ChatRequest) -> ChatCompletion:
        with self._lock:
            if self._cursor >= len(self._script):
                raise MockExhaustedError(
                    f"mock script exhausted after {len(self._script)} replies"
                )
            entry = self._script[self._cursor]
            self._cursor += 1
            self.requests.append(request)
        if isinstance(entry, Exception):
            raise entry
        if isinstance(entry, ChatCompletion):
            return entry
        return ChatCompletion(text=entry)


def mock_provider(script: list) -> MockProvider:
    return MockProvider(script)


def _digest(text: str, length: int = 8) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:length]


class DeterministicMockProvider(ProviderHandle):
    """Derives every completion from the request content alone.

    Unlike the scripted mock there is no shared cursor, so worker
    interleaving cannot change which reply a task sees: suite runs are
    reproducible byte for byte.  Draft requests get a small chart script,
    reflection requests a canned diagnosis, rewrite requests a revised
    script, and judge requests well-formed verdict JSON.
    """

    _DRAFT_TEMPLATE = (
        "```python\n"
        "import matplotlib.pyplot as plt\n"
        "\n"
        "values = [3, 1, 4, 1, 5]\n"
        "plt.bar(range(len(values)), values)\n"
        "plt.title('chart {h}')\n"
        "plt.savefig('chart_{h}.png')\n"
        "```"
    )

    def send(self, request: ChatRequest) -> ChatCompletion:
        sys_text = request.messages[0].text if request.messages[0].role == SYSTEM else ""
        last_user = next(m for m in reversed(request.messages) if m.role == USER)
        h = _digest(sys_text + "\n" + last_user.text)
        if "perceptual quality score" in sys_text:
            return ChatCompletion(text=json.dumps({"score": int(h, 16) % 101}))
        if "color-vision deficiencies" in sys_text:
            verdict = "Appropriate" if int(h, 16) % 3 else "Not appropriate"
            return ChatCompletion(text=json.dumps({"Judgment": verdict}))
        if "expert Python code rewriter" in sys_text:
            return ChatCompletion(text=self._DRAFT_TEMPLATE.format(h=f"rw-{h}"))
        if "Identify the root cause" in last_user.text:
            return ChatCompletion(
                text=f"The last plotting call is the culprit (analysis {h}); "
                "replace it with a supported call and keep everything else unchanged."
            )
        return ChatCompletion(text=self._DRAFT_TEMPLATE.format(h=h))


def _default_transport(url: str, headers: dict, body: dict, timeout: float):
    import requests

    resp = requests.post(url, headers=headers, json=body, timeout=timeout)
    try:
        payload = resp.json()
    except ValueError:
        payload = {}
    return resp.status_code, payload


class HttpProvider(ProviderHandle):
    """OpenAI-compatible HTTP provider with bounded retry.

    Rate limiting and transport failures are retried with exponential
    backoff (base 1 s, factor 2) up to 5 attempts total; authentication
    failures are terminal and never retried.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        timeout: float = 120.0,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        transport=_default_transport,
        sleeper=time.sleep,
    ):
        super().__init__(max_in_flight)
        self.endpoint = endpoint.rstrip("/")
        self._api_key = api_key
        self._timeout = timeout
        self._transport = transport
        self._sleeper = sleeper

    @property
    def name(self) -> str:
        return self.endpoint

    @classmethod
    def from_env(cls, **kwargs) -> "HttpProvider":
        api_key = os.environ.get(API_KEY_ENV, "")
        if not api_key:
            raise AuthFailedError(f"{API_KEY_ENV} is not set")
        endpoint = os.environ.get(API_BASE_ENV, DEFAULT_API_BASE)
        return cls(endpoint=endpoint, api_key=api_key, **kwargs)

    def send(self, request: ChatRequest) -> ChatCompletion:
        url = f"{self.endpoint}/chat/completions"
        headers = {"Authorization": f"Bearer {self._api_key}"}
        body = request_to_wire(request)
        delay = BACKOFF_BASE_S
        last_error: GatewayError = TransportError("no attempt made")
        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                status, payload = self._transport(url, headers, body, self._timeout)
            except Exception as exc:
                last_error = TransportError(f"transport failure: {exc}")
            else:
                if status == 200:
                    return _completion_from_payload(payload)
                if status in (401, 403):
                    raise AuthFailedError(f"authentication rejected (HTTP {status})")
                if status == 429:
                    last_error = RateLimitedError("rate limited (HTTP 429)")
                elif 400 <= status < 500:
                    raise TransportError(f"request rejected (HTTP {status}): {payload}")
                else:
                    last_error = TransportError(f"server error (HTTP {status})")
            if attempt < MAX_ATTEMPTS:
                log.debug("attempt %d/%d failed (%s); backing off %.1fs",
                          attempt, MAX_ATTEMPTS, last_error, delay)
                self._sleeper(delay)
                delay *= BACKOFF_FACTOR
        raise last_error


def _completion_from_payload(payload: dict) -> ChatCompletion:
    try:
        choice = payload["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion payload: {payload}") from exc
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content)
    finish = {"stop": FINISH_STOP, "length": FINISH_LENGTH}.get(
        choice.get("finish_reason"), FINISH_ERROR
    )
    if not content:
        finish = FINISH_ERROR
        content = ""
    usage_raw = payload.get("usage") or {}
    usage = (usage_raw.get("prompt_tokens", 0), usage_raw.get("completion_tokens", 0))
    return ChatCompletion(text=content, finish_reason=finish, usage=usage)
