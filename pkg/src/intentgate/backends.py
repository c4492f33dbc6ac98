"""Remote chat-completion classifiers and hermetic mock backends.

Two remote strategies share one wire protocol (OpenAI-style chat
completions): the sentinel strategy asks the model to emit a reserved token
instead of a reply when the student wants out, and the function-calling
strategy offers a change_topic tool the model may invoke. Both present the
same classifier interface as the local forest, so dialogue routing and
benchmarking are indifferent to the backend in play.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import requests

from .base import ChatMessage, Intent, IntentGateError, IntentPrediction

SENTINEL_TOKEN = "<exit>"

# Appended to the lesson's system prompt so a single completion both replies
# and classifies.
SENTINEL_INSTRUCTION = (
    "If the user indicates that they want to exit the conversation or change "
    "the topic, reply with the text <exit> instead of responding to the student."
)

CHANGE_TOPIC_TOOL_DESCRIPTION = (
    "This function logs that the user wishes to change the topic of "
    "conversation from the current discussion to something unrelated."
)

_BACKOFF_BASE_SECONDS = 0.5
_BACKOFF_FACTOR = 2.0


def _sleep(seconds: float) -> None:
    time.sleep(seconds)


class BackendTimeout(IntentGateError):
    pass


class TransportError(IntentGateError):
    pass


class MalformedResponse(IntentGateError):
    pass


class AuthError(IntentGateError):
    pass


class UnknownToolInvoked(IntentGateError):
    pass


class ScriptExhausted(IntentGateError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str
    model_name: str
    timeout_seconds: float = 30.0
    max_retries: int = 2
    api_key_env: str = ""

    def __post_init__(self) -> None:
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class ToolSchema:
    name: str = "change_topic"
    description: str = CHANGE_TOPIC_TOOL_DESCRIPTION
    parameters: dict = field(default_factory=lambda: {"type": "object", "properties": {}})

    def to_wire(self) -> dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            },
        }


DEFAULT_CHANGE_TOPIC_TOOL = ToolSchema()


@dataclass(frozen=True)
class BackendResponse:
    """Parsed chat-completion reply: plain text or a tool invocation."""

    kind: str  # "text" | "tool_call"
    content: str
    latency_seconds: float
    http_status: int


def reply_signals_exit(reply: str) -> bool:
    """True iff the trimmed reply contains the sentinel token, any casing.

    Hosted models routinely wrap sentinels in prose ("Okay. <EXIT>"), so this
    is substring containment rather than exact equality.
    """
    return SENTINEL_TOKEN in reply.strip().lower()


def build_sentinel_system_message(lesson_instructions: str) -> ChatMessage:
    return ChatMessage(
        role="system", content=f"{lesson_instructions}\n\n{SENTINEL_INSTRUCTION}"
    )


def _auth_headers(config: BackendConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if config.api_key_env:
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
    return headers


def _parse_completion(payload: dict) -> tuple[str, str]:
    """Return (kind, content) from a chat-completion body."""
    try:
        message = payload["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse("response has no choices[0].message") from None
    tool_calls = message.get("tool_calls")
    if tool_calls:
        try:
            name = tool_calls[0]["function"]["name"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("tool_calls entry has no function name") from None
        return "tool_call", name
    content = message.get("content")
    if not isinstance(content, str):
        raise MalformedResponse("message content is not a string")
    return "text", content


def post_chat_completion(
    config: BackendConfig,
    messages: Sequence[ChatMessage],
    tools: Sequence[ToolSchema] = (),
) -> BackendResponse:
    """POST one completion request, retrying transport faults and 429/5xx.

    Retries use exponential backoff (0.5 s base, doubling); auth failures and
    malformed bodies are never retried. The reported latency covers the full
    round trip including any retries, since that is what a student would wait.
    """
    body: dict = {
        "model": config.model_name,
        "messages": [m.to_wire() for m in messages],
    }
    if tools:
        body["tools"] = [t.to_wire() for t in tools]
    headers = _auth_headers(config)
    start = time.perf_counter()
    last_error: IntentGateError | None = None
    for attempt in range(config.max_retries + 1):
        if attempt > 0:
            _sleep(_BACKOFF_BASE_SECONDS * _BACKOFF_FACTOR ** (attempt - 1))
        try:
            response = requests.post(
                config.endpoint_url,
                json=body,
                headers=headers,
                timeout=config.timeout_seconds,
            )
        except requests.exceptions.Timeout:
            last_error = BackendTimeout(
                f"no response within {config.timeout_seconds}s from {config.endpoint_url}"
            )
            continue
        except requests.exceptions.RequestException as exc:
            last_error = TransportError(str(exc))
            continue
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint returned HTTP {response.status_code}")
        if response.status_code == 429 or response.status_code >= 500:
            last_error = TransportError(f"endpoint returned HTTP {response.status_code}")
            continue
        if response.status_code != 200:
            raise TransportError(f"endpoint returned HTTP {response.status_code}")
        try:
            payload = response.json()
        except ValueError:
            raise MalformedResponse("response body is not JSON") from None
        kind, content = _parse_completion(payload)
        return BackendResponse(
            kind=kind,
            content=content,
            latency_seconds=time.perf_counter() - start,
            http_status=response.status_code,
        )
    assert last_error is not None
    raise last_error


def _require_sentinel_context(context: Sequence[ChatMessage]) -> None:
    if not context or context[0].role != "system":
        raise ValueError("context must start with a system message")
    if SENTINEL_TOKEN not in context[0].content.lower():
        raise ValueError("system message lacks the sentinel instruction")


def classify_sentinel(
    config: BackendConfig,
    context: Sequence[ChatMessage],
    student_message: str,
) -> IntentPrediction:
    """One completion call doubling as classifier: sentinel in reply => change."""
    _require_sentinel_context(context)
    messages = list(context) + [ChatMessage(role="user", content=student_message)]
    response = post_chat_completion(config, messages)
    if response.kind != "text":
        raise MalformedResponse("sentinel request unexpectedly returned a tool call")
    if reply_signals_exit(response.content):
        intent = Intent.CHANGE_TOPIC
    else:
        intent = Intent.CONTINUE
    return IntentPrediction(
        intent=intent,
        confidence=None,
        latency_seconds=response.latency_seconds,
        raw=response.content,
    )


def classify_function_call(
    config: BackendConfig,
    context: Sequence[ChatMessage],
    student_message: str,
    tool: ToolSchema = DEFAULT_CHANGE_TOPIC_TOOL,
) -> IntentPrediction:
    """Offer the change_topic tool; invoking it is decisive for CHANGE_TOPIC."""
    messages = list(context) + [ChatMessage(role="user", content=student_message)]
    response = post_chat_completion(config, messages, tools=(tool,))
    if response.kind == "tool_call":
        if response.content != tool.name:
            raise UnknownToolInvoked(
                f"backend invoked {response.content!r}, only {tool.name!r} was offered"
            )
        return IntentPrediction(
            intent=Intent.CHANGE_TOPIC,
            confidence=None,
            latency_seconds=response.latency_seconds,
            raw=response.content,
        )
    return IntentPrediction(
        intent=Intent.CONTINUE,
        confidence=None,
        latency_seconds=response.latency_seconds,
        raw=response.content,
    )


def chat_reply(
    config: BackendConfig,
    context: Sequence[ChatMessage],
    student_message: str,
) -> tuple[str, float]:
    """Plain conversational reply for the Continue path."""
    messages = list(context) + [ChatMessage(role="user", content=student_message)]
    response = post_chat_completion(config, messages)
    if response.kind != "text":
        raise MalformedResponse("chat reply unexpectedly returned a tool call")
    return response.content, response.latency_seconds


class SentinelBackend:
    """classify_sentinel behind the shared classifier interface."""

    def __init__(self, config: BackendConfig, label: str | None = None):
        self.config = config
        self.label = label or f"{config.model_name} (sentinel)"

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        return classify_sentinel(self.config, context, text)


class FunctionCallBackend:
    """classify_function_call behind the shared classifier interface."""

    def __init__(
        self,
        config: BackendConfig,
        tool: ToolSchema = DEFAULT_CHANGE_TOPIC_TOOL,
        label: str | None = None,
    ):
        self.config = config
        self.tool = tool
        self.label = label or f"{config.model_name} (function calling)"

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        return classify_function_call(self.config, context, text, self.tool)


class ScriptedMockBackend:
    """Replays a fixed response script; hermetic stand-in for a remote model.

    String entries are treated as assistant reply text (sentinel rule
    applies); ("tool", name) entries simulate a tool invocation. Consuming
    past the end raises ScriptExhausted. artificial_latency_seconds is spent
    sleeping inside each call so latency measurement has something to see.
    """

    def __init__(
        self,
        script: Sequence[str | tuple],
        artificial_latency_seconds: float = 0.0,
        label: str = "scripted_mock",
    ):
        if not script:
            raise ValueError("script must be non-empty")
        self._entries = list(script)
        self._cursor = 0
        self._lock = threading.Lock()
        self.artificial_latency_seconds = artificial_latency_seconds
        self.label = label

    def _next_entry(self) -> str | tuple:
        with self._lock:
            if self._cursor >= len(self._entries):
                raise ScriptExhausted(f"script of {len(self._entries)} entries consumed")
            entry = self._entries[self._cursor]
            self._cursor += 1
            return entry

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        entry = self._next_entry()
        start = time.perf_counter()
        if self.artificial_latency_seconds > 0:
            time.sleep(self.artificial_latency_seconds)
        latency = time.perf_counter() - start
        if isinstance(entry, tuple):
            kind, name = entry
            if kind != "tool":
                raise ValueError(f"unknown script entry kind: {kind!r}")
            if name != DEFAULT_CHANGE_TOPIC_TOOL.name:
                raise UnknownToolInvoked(f"scripted tool call names {name!r}")
            return IntentPrediction(
                intent=Intent.CHANGE_TOPIC,
                confidence=None,
                latency_seconds=latency,
                raw=name,
            )
        intent = Intent.CHANGE_TOPIC if reply_signals_exit(entry) else Intent.CONTINUE
        return IntentPrediction(
            intent=intent, confidence=None, latency_seconds=latency, raw=entry
        )


def scripted_mock_backend(
    script: Sequence[str | tuple],
    artificial_latency_seconds: float = 0.0,
    label: str = "scripted_mock",
) -> ScriptedMockBackend:
    return ScriptedMockBackend(script, artificial_latency_seconds, label)


class RuleBasedMockBackend:
    """Deterministic local backend for demos and service tests.

    Applies the sentinel rule directly to the student's message and otherwise
    echoes a canned acknowledgement, with an optional artificial delay.
    """

    def __init__(self, artificial_latency_seconds: float = 0.0, label: str = "mock"):
        self.artificial_latency_seconds = artificial_latency_seconds
        self.label = label

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        start = time.perf_counter()
        if self.artificial_latency_seconds > 0:
            time.sleep(self.artificial_latency_seconds)
        latency = time.perf_counter() - start
        if reply_signals_exit(text):
            return IntentPrediction(
                intent=Intent.CHANGE_TOPIC,
                confidence=None,
                latency_seconds=latency,
                raw="",
            )
        return IntentPrediction(
            intent=Intent.CONTINUE,
            confidence=None,
            latency_seconds=latency,
            raw="Noted, let's keep going.",
        )
