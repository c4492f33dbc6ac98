"""Core types shared by every classifier backend and the dialogue layer."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, Sequence


class IntentGateError(Exception):
    """Base class for all errors raised by this package."""


class Intent(enum.Enum):
    """The two message intents. CHANGE_TOPIC is the positive class."""

    CONTINUE = "continue"
    CHANGE_TOPIC = "change_topic"

    @classmethod
    def from_wire(cls, value: str) -> "Intent":
        for intent in cls:
            if intent.value == value:
                return intent
        raise ValueError(f"unknown intent label: {value!r}")


CHAT_ROLES = frozenset({"system", "user", "assistant", "tool"})


@dataclass(frozen=True)
class ChatMessage:
    """One turn of chat context in wire order."""

    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in CHAT_ROLES:
            raise ValueError(f"unknown chat role: {self.role!r}")
        if not self.content and self.role != "tool":
            raise ValueError("content may be empty only for tool-call placeholders")

    def to_wire(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class IntentPrediction:
    """Backend-agnostic classification result for one student message.

    ``confidence`` is absent (None) for backends that cannot produce a
    calibrated score; ``raw`` carries the backend's reply text or another
    diagnostic string.
    """

    intent: Intent
    latency_seconds: float
    confidence: float | None = None
    raw: str = ""

    def __post_init__(self) -> None:
        if self.latency_seconds < 0:
            raise ValueError("latency must be non-negative")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


class Classifier(Protocol):
    """The interface every backend presents to dialogue and bench code."""

    label: str

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        ...
