"""Six-phase lesson conversation with confidence-thresholded turn routing.

Each student turn is classified; high-confidence (or confidence-free)
Change-Topic signals navigate immediately, mid-confidence ones trigger a
confirmation question with a one-retry budget, and everything else keeps the
lesson moving. Classifier failures fail open to Continue: a wrongly continued
lesson is recoverable, a wrongly ended one is not.
"""

from __future__ import annotations

import copy
import enum
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .base import ChatMessage, Classifier, Intent, IntentGateError, IntentPrediction

logger = logging.getLogger(__name__)

N_PHASES = 6

CONFIRMATION_QUESTION = (
    "It sounds like you want to stop this lesson and do something else. "
    "Is that right? (yes/no)"
)

YES_WORDS = frozenset({"yes", "y", "yeah", "yh", "ok", "okay", "sure", "yea", "yep"})
NO_WORDS = frozenset({"no", "n", "nah", "nope", "continue", "keep going"})


class WrongPhaseCount(IntentGateError):
    pass


class MalformedScript(IntentGateError):
    pass


class ConversationCompleted(IntentGateError):
    pass


class NavigationKind(enum.Enum):
    CHANGE_TOPIC_REQUESTED = "change_topic_requested"
    CONVERSATION_COMPLETE = "conversation_complete"


@dataclass(frozen=True)
class Reply:
    text: str


@dataclass(frozen=True)
class Navigation:
    kind: NavigationKind


TurnOutcome = Reply | Navigation


@dataclass(frozen=True)
class PhaseScript:
    index: int
    description: str
    example_responses: tuple[str, ...]


@dataclass(frozen=True)
class ThresholdPolicy:
    """Act immediately at or above act_threshold; confirm in [confirm, act)."""

    act_threshold: float = 0.75
    confirm_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.confirm_threshold <= self.act_threshold <= 1.0:
            raise ValueError("need 0 <= confirm_threshold <= act_threshold <= 1")


@dataclass
class DialogueState:
    conversation_id: str
    phase_index: int = 1
    completed: bool = False
    history: list[ChatMessage] = field(default_factory=list)
    pending_confirmation: bool = False
    confirmation_retries_used: int = 0


# Called on the Continue path; target_phase is the phase whose content the
# reply should present, prediction is the classifier output when one exists.
ReplyGenerator = Callable[[DialogueState, str, int, "IntentPrediction | None"], str]


def parse_confirmation(text: str) -> str:
    """Map a student's answer to 'yes' | 'no' | 'unclear' by exact lexicon lookup."""
    normalized = text.strip().lower()
    if normalized in YES_WORDS:
        return "yes"
    if normalized in NO_WORDS:
        return "no"
    return "unclear"


def _finish_turn(
    state: DialogueState, student_message: str, outcome: TurnOutcome
) -> tuple[DialogueState, TurnOutcome]:
    if isinstance(outcome, Reply):
        system_text = outcome.text
    else:
        system_text = f"[navigation] {outcome.kind.value}"
    state.history.append(ChatMessage(role="user", content=student_message))
    state.history.append(ChatMessage(role="assistant", content=system_text))
    return state, outcome


def handle_turn(
    state: DialogueState,
    student_message: str,
    classifier: Classifier,
    reply_generator: ReplyGenerator,
    policy: ThresholdPolicy = ThresholdPolicy(),
) -> tuple[DialogueState, TurnOutcome]:
    """Route one student turn; returns a new state plus the outcome.

    The input state is not mutated. History always grows by exactly two
    messages: the student's and the system's output (reply, confirmation
    question, or navigation marker).
    """
    if state.completed:
        raise ConversationCompleted(state.conversation_id)
    new = copy.deepcopy(state)

    if new.pending_confirmation:
        answer = parse_confirmation(student_message)
        if answer == "yes":
            new.pending_confirmation = False
            new.confirmation_retries_used = 0
            return _finish_turn(
                new, student_message, Navigation(NavigationKind.CHANGE_TOPIC_REQUESTED)
            )
        if answer == "no":
            new.pending_confirmation = False
            new.confirmation_retries_used = 0
            text = reply_generator(new, student_message, new.phase_index, None)
            return _finish_turn(new, student_message, Reply(text))
        if new.confirmation_retries_used < 1:
            new.confirmation_retries_used += 1
            return _finish_turn(new, student_message, Reply(CONFIRMATION_QUESTION))
        new.pending_confirmation = False
        new.confirmation_retries_used = 0
        text = reply_generator(new, student_message, new.phase_index, None)
        return _finish_turn(new, student_message, Reply(text))

    prediction: IntentPrediction | None
    try:
        prediction = classifier.classify(tuple(state.history), student_message)
    except IntentGateError as exc:
        logger.warning(
            "classifier failed on conversation %s, continuing lesson: %s",
            state.conversation_id,
            exc,
        )
        prediction = None

    if prediction is not None and prediction.intent is Intent.CHANGE_TOPIC:
        confidence = prediction.confidence
        if confidence is None or confidence >= policy.act_threshold:
            return _finish_turn(
                new, student_message, Navigation(NavigationKind.CHANGE_TOPIC_REQUESTED)
            )
        if confidence >= policy.confirm_threshold:
            new.pending_confirmation = True
            new.confirmation_retries_used = 0
            return _finish_turn(new, student_message, Reply(CONFIRMATION_QUESTION))

    if new.phase_index >= N_PHASES:
        new.completed = True
        return _finish_turn(
            new, student_message, Navigation(NavigationKind.CONVERSATION_COMPLETE)
        )
    target = new.phase_index + 1
    text = reply_generator(new, student_message, target, prediction)
    new.phase_index = target
    return _finish_turn(new, student_message, Reply(text))


def _phase_from_entry(entry: dict, position: int) -> PhaseScript:
    if not isinstance(entry, dict):
        raise MalformedScript(f"phase entry {position} is not an object")
    try:
        index = entry["index"]
        description = entry["description"]
        example_responses = entry["example_responses"]
    except KeyError as exc:
        raise MalformedScript(
            f"phase entry {position} missing field {exc.args[0]!r}"
        ) from None
    if not isinstance(index, int) or not isinstance(description, str):
        raise MalformedScript(f"phase entry {position} has wrong field types")
    if not isinstance(example_responses, list) or not all(
        isinstance(x, str) for x in example_responses
    ):
        raise MalformedScript(f"phase entry {position}: example_responses must be strings")
    return PhaseScript(
        index=index,
        description=description,
        example_responses=tuple(example_responses),
    )


def _validate_phases(entries: list) -> list[PhaseScript]:
    if not isinstance(entries, list):
        raise MalformedScript("phase script file must hold a JSON array")
    if len(entries) != N_PHASES:
        raise WrongPhaseCount(f"expected {N_PHASES} phases, got {len(entries)}")
    phases = [_phase_from_entry(entry, i) for i, entry in enumerate(entries)]
    indices = sorted(p.index for p in phases)
    if len(set(indices)) != N_PHASES:
        raise MalformedScript(f"duplicate phase indices: {indices}")
    if indices != list(range(1, N_PHASES + 1)):
        raise MalformedScript(f"phase indices must be 1..{N_PHASES}, got {indices}")
    return sorted(phases, key=lambda p: p.index)


def load_phase_scripts(path: str | Path) -> list[PhaseScript]:
    """Read and validate a six-phase script file."""
    with open(path, encoding="utf-8") as handle:
        try:
            entries = json.load(handle)
        except json.JSONDecodeError as exc:
            raise MalformedScript(f"invalid JSON: {exc.msg}") from None
    return _validate_phases(entries)


def load_default_phase_scripts() -> list[PhaseScript]:
    """The bundled math-history lesson phases."""
    text = (
        resources.files("intentgate").joinpath("data/math_history_phases.json").read_text(
            encoding="utf-8"
        )
    )
    return _validate_phases(json.loads(text))


class PhaseScriptReplies:
    """Reply generator that presents the target phase's scripted content."""

    def __init__(self, phases: Sequence[PhaseScript]):
        self.by_index = {p.index: p for p in phases}

    def __call__(
        self,
        state: DialogueState,
        student_message: str,
        target_phase: int,
        prediction: IntentPrediction | None,
    ) -> str:
        return self.by_index[target_phase].description


def reuse_backend_reply(fallback: ReplyGenerator) -> ReplyGenerator:
    """Prefer the classifier's own reply text (sentinel backends produce one).

    Falls back to the wrapped generator when the prediction carries no usable
    text, e.g. after a fail-open classification or a confirmation resume.
    """

    def generate(
        state: DialogueState,
        student_message: str,
        target_phase: int,
        prediction: IntentPrediction | None,
    ) -> str:
        if prediction is not None and prediction.raw.strip():
            return prediction.raw
        return fallback(state, student_message, target_phase, prediction)

    return generate


def state_to_dict(state: DialogueState) -> dict:
    return {
        "conversation_id": state.conversation_id,
        "phase_index": state.phase_index,
        "completed": state.completed,
        "pending_confirmation": state.pending_confirmation,
        "confirmation_retries_used": state.confirmation_retries_used,
        "history": [m.to_wire() for m in state.history],
    }


def state_from_dict(payload: dict) -> DialogueState:
    return DialogueState(
        conversation_id=payload["conversation_id"],
        phase_index=int(payload["phase_index"]),
        completed=bool(payload["completed"]),
        pending_confirmation=bool(payload["pending_confirmation"]),
        confirmation_retries_used=int(payload["confirmation_retries_used"]),
        history=[
            ChatMessage(role=m["role"], content=m["content"]) for m in payload["history"]
        ],
    )
