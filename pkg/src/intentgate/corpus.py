"""Annotated message datasets: loading, splitting, agreement, synthesis."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .base import Intent, IntentGateError


class MalformedRecord(IntentGateError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class DuplicateMessageId(IntentGateError):
    pass


class EmptyDataset(IntentGateError):
    pass


class InvalidRatios(IntentGateError):
    pass


class TooFewGroups(IntentGateError):
    pass


class DegenerateMarginals(IntentGateError):
    pass


class InvalidRate(IntentGateError):
    pass


@dataclass(frozen=True)
class LabeledMessage:
    """One student message with its adjudicated intent label.

    ``annotations`` holds up to two (annotator_id, Intent) pairs from the
    double-annotation pass; when both agree, ``label`` must equal that value
    (the stored label is the adjudicated one and is never recomputed here).
    """

    conversation_id: str
    message_id: str
    text: str
    label: Intent
    phase_index: int | None = None
    annotations: tuple[tuple[str, Intent], ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("text must be non-empty after trimming")
        if self.phase_index is not None and not 1 <= self.phase_index <= 6:
            raise ValueError("phase_index must be in 1..6")
        if len(self.annotations) > 2:
            raise ValueError("at most 2 annotations per message")
        if len(self.annotations) == 2:
            a, b = self.annotations[0][1], self.annotations[1][1]
            if a == b and a != self.label:
                raise ValueError("label contradicts a unanimous annotation pair")


@dataclass(frozen=True)
class Dataset:
    """An ordered, validated collection of labeled messages."""

    messages: tuple[LabeledMessage, ...]
    source_path: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise EmptyDataset("dataset has no messages")
        seen: set[str] = set()
        for m in self.messages:
            if m.message_id in seen:
                raise DuplicateMessageId(m.message_id)
            seen.add(m.message_id)

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self) -> Iterator[LabeledMessage]:
        return iter(self.messages)

    def message_ids(self) -> list[str]:
        return [m.message_id for m in self.messages]

    def conversation_ids(self) -> list[str]:
        """Distinct conversation ids in first-appearance order."""
        out: list[str] = []
        seen: set[str] = set()
        for m in self.messages:
            if m.conversation_id not in seen:
                seen.add(m.conversation_id)
                out.append(m.conversation_id)
        return out

    def by_conversation(self) -> dict[str, list[LabeledMessage]]:
        groups: dict[str, list[LabeledMessage]] = {}
        for m in self.messages:
            groups.setdefault(m.conversation_id, []).append(m)
        return groups

    def subset(self, message_ids: Iterable[str]) -> "Dataset":
        wanted = set(message_ids)
        kept = tuple(m for m in self.messages if m.message_id in wanted)
        return Dataset(messages=kept, source_path=self.source_path)


@dataclass(frozen=True)
class SplitResult:
    """Message-id partition into train/validation/test."""

    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    grouped: bool


@dataclass(frozen=True)
class AgreementReport:
    n_items: int
    percent_agreement: float
    kappa: float


def _message_from_record(record: dict, line_number: int) -> LabeledMessage:
    try:
        conversation_id = record["conversation_id"]
        message_id = record["message_id"]
        text = record["text"]
        label = record["label"]
    except KeyError as exc:
        raise MalformedRecord(line_number, f"missing field {exc.args[0]!r}") from None
    if not isinstance(conversation_id, str) or not isinstance(message_id, str):
        raise MalformedRecord(line_number, "conversation_id and message_id must be strings")
    if not isinstance(text, str):
        raise MalformedRecord(line_number, "text must be a string")
    try:
        intent = Intent.from_wire(label)
    except ValueError as exc:
        raise MalformedRecord(line_number, str(exc)) from None
    phase_index = record.get("phase_index")
    if phase_index is not None and not isinstance(phase_index, int):
        raise MalformedRecord(line_number, "phase_index must be an integer or null")
    annotations: list[tuple[str, Intent]] = []
    for ann in record.get("annotations", []):
        try:
            annotations.append((ann["annotator"], Intent.from_wire(ann["label"])))
        except (TypeError, KeyError, ValueError):
            raise MalformedRecord(line_number, "malformed annotation entry") from None
    try:
        return LabeledMessage(
            conversation_id=conversation_id,
            message_id=message_id,
            text=text,
            label=intent,
            phase_index=phase_index,
            annotations=tuple(annotations),
        )
    except ValueError as exc:
        raise MalformedRecord(line_number, str(exc)) from None


def _message_to_record(m: LabeledMessage) -> dict:
    return {
        "conversation_id": m.conversation_id,
        "message_id": m.message_id,
        "text": m.text,
        "phase_index": m.phase_index,
        "label": m.label.value,
        "annotations": [{"annotator": a, "label": i.value} for a, i in m.annotations],
    }


def load_dataset(path: str | Path) -> Dataset:
    """Read a JSONL dataset; one validated record per line, order preserved."""
    messages: list[LabeledMessage] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_number, f"invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise MalformedRecord(line_number, "record is not a JSON object")
            message = _message_from_record(record, line_number)
            if message.message_id in seen:
                raise DuplicateMessageId(message.message_id)
            seen.add(message.message_id)
            messages.append(message)
    if not messages:
        raise EmptyDataset(str(path))
    return Dataset(messages=tuple(messages), source_path=str(path))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write JSONL with LF line endings; lossless against load_dataset."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for m in dataset.messages:
            handle.write(json.dumps(_message_to_record(m), ensure_ascii=False))
            handle.write("\n")


def allocate_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Floor-then-largest-remainder allocation of n items across ratios.

    Remainder ties are broken by position (train before validation before
    test), which keeps the allocation deterministic.
    """
    raw = [n * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    remainder = n - sum(counts)
    by_fraction = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_fraction[:remainder]:
        counts[i] += 1
    return counts


def split_dataset(
    dataset: Dataset,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    grouped: bool = False,
) -> SplitResult:
    """Partition message ids into train/validation/test.

    Ungrouped mode shuffles messages; grouped mode shuffles whole
    conversations and fills each split toward its message-count target so no
    conversation spans two splits.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise InvalidRatios(f"ratios must be three non-negative values: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must sum to 1: {ratios}")
    rng = random.Random(seed)
    targets = allocate_counts(len(dataset), ratios)
    if not grouped:
        ids = dataset.message_ids()
        rng.shuffle(ids)
        train = ids[: targets[0]]
        validation = ids[targets[0] : targets[0] + targets[1]]
        test = ids[targets[0] + targets[1] :]
    else:
        conversations = dataset.conversation_ids()
        if len(conversations) < 3:
            raise TooFewGroups(
                f"grouped split needs at least 3 conversations, got {len(conversations)}"
            )
        rng.shuffle(conversations)
        groups = dataset.by_conversation()
        buckets: list[list[str]] = [[], [], []]
        filled = [0, 0, 0]
        for conv in conversations:
            deficits = [targets[i] - filled[i] for i in range(3)]
            dest = max(range(3), key=lambda i: (deficits[i], -i))
            ids = [m.message_id for m in groups[conv]]
            buckets[dest].extend(ids)
            filled[dest] += len(ids)
        train, validation, test = buckets
    return SplitResult(
        train=tuple(train),
        validation=tuple(validation),
        test=tuple(test),
        seed=seed,
        grouped=grouped,
    )


def save_split_result(split: SplitResult, path: str | Path) -> None:
    payload = {
        "train": list(split.train),
        "validation": list(split.validation),
        "test": list(split.test),
        "seed": split.seed,
        "grouped": split.grouped,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def load_split_result(path: str | Path) -> SplitResult:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    return SplitResult(
        train=tuple(payload["train"]),
        validation=tuple(payload["validation"]),
        test=tuple(payload["test"]),
        seed=int(payload["seed"]),
        grouped=bool(payload["grouped"]),
    )


def compute_agreement(pairs: Sequence[tuple[Intent, Intent]]) -> AgreementReport:
    """Percent agreement and Cohen's kappa over double-annotated items.

    Expected agreement p_e comes from each annotator's marginal label
    frequencies; kappa = (p_o - p_e) / (1 - p_e).
    """
    if len(pairs) < 2:
        raise ValueError("agreement needs at least 2 annotation pairs")
    n = len(pairs)
    matches = sum(1 for a, b in pairs if a == b)
    p_o = matches / n
    p_e = 0.0
    for intent in Intent:
        p_a = sum(1 for a, _ in pairs if a == intent) / n
        p_b = sum(1 for _, b in pairs if b == intent) / n
        p_e += p_a * p_b
    if p_e == 1.0:
        raise DegenerateMarginals(
            "both annotators used a single identical label; kappa is undefined"
        )
    kappa = (p_o - p_e) / (1.0 - p_e)
    return AgreementReport(n_items=n, percent_agreement=p_o, kappa=kappa)


def agreement_pairs(dataset: Dataset) -> list[tuple[Intent, Intent]]:
    """Extract (annotator A, annotator B) label pairs from double-annotated rows."""
    return [
        (m.annotations[0][1], m.annotations[1][1])
        for m in dataset.messages
        if len(m.annotations) == 2
    ]


def class_balance(dataset: Dataset) -> float:
    """Fraction of messages labeled CHANGE_TOPIC."""
    positives = sum(1 for m in dataset.messages if m.label is Intent.CHANGE_TOPIC)
    return positives / len(dataset)


# Template pools for the synthetic corpus. The Continue pool mirrors the
# short on-topic replies students give during the math-history lesson; the
# Change-Topic pool mirrors observed requests to stop or redirect the lesson.
CONTINUE_TEMPLATES: tuple[str, ...] = (
    "yes",
    "yh",
    "okay",
    "no",
    "how",
    "100yrs",
    "forever",
    "maybe",
    "one day",
    "where is that?",
    "tell me more",
    "what is that",
)

CHANGE_TOPIC_TEMPLATES: tuple[str, ...] = (
    "Pls can we go straight to the teaching",
    "teach me mathematics",
    "What is the LCM of 16",
    "I want to stop",
    "Can u solve math question 4 me",
    "can we do something else",
    "skip this lesson",
    "i want to learn division",
)

FILLER_TOKENS: tuple[str, ...] = ("oo", "abeg", "o", "sha", "hmm", "na")


def _perturb(template: str, rng: random.Random) -> str:
    """Seeded lexical noise: casing, character elongation, filler tokens."""
    text = template
    roll = rng.random()
    if roll < 0.15:
        text = text.upper()
    elif roll < 0.35:
        text = text.capitalize()
    if rng.random() < 0.2:
        words = text.split(" ")
        i = rng.randrange(len(words))
        if words[i] and words[i][-1].isalpha():
            words[i] = words[i] + words[i][-1] * rng.randint(1, 2)
        text = " ".join(words)
    if rng.random() < 0.25:
        filler = rng.choice(FILLER_TOKENS)
        if rng.random() < 0.5:
            text = f"{filler} {text}"
        else:
            text = f"{text} {filler}"
    return text


def generate_synthetic_corpus(n: int, positive_rate: float, seed: int = 0) -> Dataset:
    """Build a deterministic template-based corpus with an exact positive count.

    Messages are grouped into conversations of 2..6 turns; round(n *
    positive_rate) of them are CHANGE_TOPIC. A quarter of messages carry a
    second annotation (with a small seeded disagreement rate) so agreement
    tooling has something to chew on.
    """
    if not 0.0 < positive_rate < 1.0:
        raise InvalidRate(f"positive_rate must be in (0, 1), got {positive_rate}")
    if n < 20:
        raise ValueError("synthetic corpus needs n >= 20")
    rng = random.Random(seed)
    n_positive = int(round(n * positive_rate))
    positive_slots = set(rng.sample(range(n), n_positive))

    messages: list[LabeledMessage] = []
    conversation_index = 0
    position = 0
    while position < n:
        conversation_index += 1
        size = min(rng.randint(2, 6), n - position)
        conv_id = f"conv-{conversation_index:04d}"
        for turn in range(size):
            idx = position + turn
            label = Intent.CHANGE_TOPIC if idx in positive_slots else Intent.CONTINUE
            pool = CHANGE_TOPIC_TEMPLATES if label is Intent.CHANGE_TOPIC else CONTINUE_TEMPLATES
            text = _perturb(rng.choice(pool), rng)
            annotations: tuple[tuple[str, Intent], ...] = ()
            if rng.random() < 0.25:
                second = label
                if rng.random() < 0.05:
                    second = (
                        Intent.CONTINUE
                        if label is Intent.CHANGE_TOPIC
                        else Intent.CHANGE_TOPIC
                    )
                annotations = (("ann-a", label), ("ann-b", second))
            messages.append(
                LabeledMessage(
                    conversation_id=conv_id,
                    message_id=f"msg-{idx:05d}",
                    text=text,
                    label=label,
                    phase_index=min(turn + 1, 6),
                    annotations=annotations,
                )
            )
        position += size
    return Dataset(
        messages=tuple(messages),
        source_path=f"synthetic:n={n},rate={positive_rate},seed={seed}",
    )
