"""Evaluation harness: confusion metrics, latency stats, uncertainty, reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .base import Classifier, Intent, IntentGateError
from .corpus import Dataset

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "Model",
    "F1",
    "Precision",
    "Recall",
    "Inference Time (s)",
    "Precision (Change)",
    "Recall (Change)",
)


class EmptyMatrix(IntentGateError):
    pass


class EvaluationDegraded(IntentGateError):
    pass


class TooFewClusters(IntentGateError):
    pass


class SingleClass(IntentGateError):
    pass


class NoScores(IntentGateError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts with CHANGE_TOPIC as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_pairs(cls, gold: Sequence[Intent], predicted: Sequence[Intent]) -> "ConfusionMatrix":
        if len(gold) != len(predicted):
            raise ValueError("gold and predicted lengths differ")
        tp = fp = fn = tn = 0
        for g, p in zip(gold, predicted):
            if g is Intent.CHANGE_TOPIC:
                if p is Intent.CHANGE_TOPIC:
                    tp += 1
                else:
                    fn += 1
            else:
                if p is Intent.CHANGE_TOPIC:
                    fp += 1
                else:
                    tn += 1
        return cls(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True)
class EvalResult:
    """Macro and Change-class metrics for one model on one test set.

    Macro metrics are unweighted means over the two classes. Ratios with a
    zero denominator are reported as 0 and has_undefined_ratios is set, so
    report rendering stays total.
    """

    model_label: str
    n_messages: int
    macro_f1: float
    macro_precision: float
    macro_recall: float
    change_precision: float
    change_recall: float
    mean_inference_seconds: float
    has_undefined_ratios: bool = False


def _safe_ratio(numerator: int, denominator: int) -> tuple[float, bool]:
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


def metrics_from_confusion(
    cm: ConfusionMatrix,
    model_label: str = "",
    mean_inference_seconds: float = 0.0,
) -> EvalResult:
    """Per-class precision/recall/F1 folded into macro averages."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    flags: list[bool] = []

    def ratio(num: int, den: int) -> float:
        value, undefined = _safe_ratio(num, den)
        flags.append(undefined)
        return value

    change_precision = ratio(cm.tp, cm.tp + cm.fp)
    change_recall = ratio(cm.tp, cm.tp + cm.fn)
    continue_precision = ratio(cm.tn, cm.tn + cm.fn)
    continue_recall = ratio(cm.tn, cm.tn + cm.fp)

    def f1(precision: float, recall: float) -> float:
        if precision + recall == 0.0:
            flags.append(True)
            return 0.0
        return 2.0 * precision * recall / (precision + recall)

    change_f1 = f1(change_precision, change_recall)
    continue_f1 = f1(continue_precision, continue_recall)
    return EvalResult(
        model_label=model_label,
        n_messages=cm.total,
        macro_f1=(change_f1 + continue_f1) / 2.0,
        macro_precision=(change_precision + continue_precision) / 2.0,
        macro_recall=(change_recall + continue_recall) / 2.0,
        change_precision=change_precision,
        change_recall=change_recall,
        mean_inference_seconds=mean_inference_seconds,
        has_undefined_ratios=any(flags),
    )


@dataclass(frozen=True)
class MessageRecord:
    """Outcome of classifying one test message (error XOR prediction)."""

    message_id: str
    conversation_id: str
    gold: Intent
    predicted: Intent | None
    confidence: float | None
    latency_seconds: float | None
    error: str | None = None


@dataclass(frozen=True)
class EvalRun:
    result: EvalResult
    confusion: ConfusionMatrix
    records: tuple[MessageRecord, ...]
    n_errors: int


def evaluate(
    classifier: Classifier,
    test_set: Dataset,
    decision_threshold: float = 0.5,
    warmup: bool = True,
) -> EvalRun:
    """Classify every message once, in dataset order, recording latency.

    When a prediction carries a confidence, the decision threshold is applied
    to it here; backends without confidence are taken at their word. A single
    untimed warm-up call precedes measurement (disable for scripted backends
    whose scripts must line up 1:1 with messages). Messages whose backend
    call fails are recorded with the error and excluded from the metrics;
    if more than 10% fail the whole evaluation is abandoned.
    """
    messages = list(test_set)
    if not messages:
        raise ValueError("test set is empty")
    if warmup:
        try:
            classifier.classify((), messages[0].text)
        except IntentGateError:
            logger.warning("warm-up call failed; continuing with measurement")
    records: list[MessageRecord] = []
    gold_scored: list[Intent] = []
    predicted_scored: list[Intent] = []
    latencies: list[float] = []
    n_errors = 0
    for message in messages:
        try:
            prediction = classifier.classify((), message.text)
        except IntentGateError as exc:
            n_errors += 1
            records.append(
                MessageRecord(
                    message_id=message.message_id,
                    conversation_id=message.conversation_id,
                    gold=message.label,
                    predicted=None,
                    confidence=None,
                    latency_seconds=None,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
            continue
        if prediction.confidence is not None:
            predicted = (
                Intent.CHANGE_TOPIC
                if prediction.confidence >= decision_threshold
                else Intent.CONTINUE
            )
        else:
            predicted = prediction.intent
        records.append(
            MessageRecord(
                message_id=message.message_id,
                conversation_id=message.conversation_id,
                gold=message.label,
                predicted=predicted,
                confidence=prediction.confidence,
                latency_seconds=prediction.latency_seconds,
                error=None,
            )
        )
        gold_scored.append(message.label)
        predicted_scored.append(predicted)
        latencies.append(prediction.latency_seconds)
    if n_errors > 0.10 * len(messages):
        raise EvaluationDegraded(
            f"{n_errors} of {len(messages)} messages failed classification"
        )
    confusion = ConfusionMatrix.from_pairs(gold_scored, predicted_scored)
    result = metrics_from_confusion(
        confusion,
        model_label=getattr(classifier, "label", type(classifier).__name__),
        mean_inference_seconds=float(np.mean(latencies)) if latencies else 0.0,
    )
    result = dataclasses.replace(result, n_messages=len(messages))
    return EvalRun(
        result=result,
        confusion=confusion,
        records=tuple(records),
        n_errors=n_errors,
    )


def write_records_jsonl(records: Sequence[MessageRecord], path: str | Path) -> None:
    """Per-message outcomes, one JSON object per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for r in records:
            handle.write(
                json.dumps(
                    {
                        "message_id": r.message_id,
                        "gold": r.gold.value,
                        "predicted": None if r.predicted is None else r.predicted.value,
                        "confidence": r.confidence,
                        "latency_seconds": r.latency_seconds,
                        "error": r.error,
                    }
                )
            )
            handle.write("\n")


@dataclass(frozen=True)
class UncertaintyReport:
    macro_f1_mean: float
    macro_f1_se: float
    n_resamples: int
    seed: int
    n_clusters: int


def _cluster_confusions(
    records: Sequence[MessageRecord], conversation_ids: Sequence[str]
) -> np.ndarray:
    """Per-cluster (tp, fp, fn, tn) contributions in first-appearance order."""
    if len(records) != len(conversation_ids):
        raise ValueError("records and conversation_ids lengths differ")
    order: list[str] = []
    index: dict[str, int] = {}
    for conv in conversation_ids:
        if conv not in index:
            index[conv] = len(order)
            order.append(conv)
    cms = np.zeros((len(order), 4), dtype=np.int64)
    for record, conv in zip(records, conversation_ids):
        if record.predicted is None:
            continue
        i = index[conv]
        if record.gold is Intent.CHANGE_TOPIC:
            if record.predicted is Intent.CHANGE_TOPIC:
                cms[i, 0] += 1
            else:
                cms[i, 2] += 1
        else:
            if record.predicted is Intent.CHANGE_TOPIC:
                cms[i, 1] += 1
            else:
                cms[i, 3] += 1
    return cms


def _macro_f1_of_counts(counts: np.ndarray) -> float:
    cm = ConfusionMatrix(
        tp=int(counts[0]), fp=int(counts[1]), fn=int(counts[2]), tn=int(counts[3])
    )
    if cm.total == 0:
        return 0.0
    return metrics_from_confusion(cm).macro_f1


def clustered_bootstrap(
    records: Sequence[MessageRecord],
    conversation_ids: Sequence[str],
    n_resamples: int = 1000,
    seed: int = 0,
    exhaustive: bool = False,
) -> UncertaintyReport:
    """Macro-F1 standard error under conversation-clustered resampling.

    Each resample draws n_clusters conversations with replacement and
    recomputes macro-F1 over their pooled messages; the standard error is the
    population standard deviation of the resampled values. With
    exhaustive=True every one of the k^k equally likely draws is enumerated
    instead of sampled (tiny k only), which is what the tests compare against.
    """
    cms = _cluster_confusions(records, conversation_ids)
    k = cms.shape[0]
    if k < 2:
        raise TooFewClusters(f"need at least 2 conversations, got {k}")
    if exhaustive:
        if k > 8:
            raise ValueError("exhaustive enumeration is only sensible for k <= 8")
        values = np.array(
            [
                _macro_f1_of_counts(cms[list(draw)].sum(axis=0))
                for draw in itertools.product(range(k), repeat=k)
            ]
        )
        n_draws = values.size
    else:
        if n_resamples < 1:
            raise ValueError("n_resamples must be >= 1")
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF]))
        draws = rng.integers(0, k, size=(n_resamples, k))
        values = np.array(
            [_macro_f1_of_counts(cms[draw].sum(axis=0)) for draw in draws]
        )
        n_draws = n_resamples
    return UncertaintyReport(
        macro_f1_mean=float(values.mean()),
        macro_f1_se=float(values.std(ddof=0)),
        n_resamples=n_draws,
        seed=seed,
        n_clusters=k,
    )


def roc_auc(scores: Sequence[float], gold: Sequence[Intent]) -> float:
    """Probability a random positive outscores a random negative; ties count half.

    Computed from tie-averaged ranks (the rank-sum formulation), which is
    exact and O(n log n).
    """
    if scores is None or len(scores) == 0:
        raise NoScores("no confidence scores available")
    if len(scores) != len(gold):
        raise ValueError("scores and gold lengths differ")
    s = np.asarray(scores, dtype=np.float64)
    positive = np.array([g is Intent.CHANGE_TOPIC for g in gold])
    n_pos = int(positive.sum())
    n_neg = len(gold) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC AUC needs both classes present")
    n = s.size
    order = np.argsort(s, kind="mergesort")
    sorted_scores = s[order]
    new_run = np.empty(n, dtype=bool)
    new_run[0] = True
    new_run[1:] = sorted_scores[1:] != sorted_scores[:-1]
    run_id = np.cumsum(new_run) - 1
    run_first = np.flatnonzero(new_run)
    run_len = np.diff(np.append(run_first, n))
    average_rank = run_first + (run_len - 1) / 2.0 + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = average_rank[run_id]
    positive_rank_sum = float(ranks[positive].sum())
    return (positive_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _format_cell(value: float) -> str:
    return f"{value:.2f}"


def _report_rows(results: Sequence[EvalResult]) -> list[list[str]]:
    rows = [list(REPORT_COLUMNS)]
    for r in results:
        rows.append(
            [
                r.model_label,
                _format_cell(r.macro_f1),
                _format_cell(r.macro_precision),
                _format_cell(r.macro_recall),
                _format_cell(r.mean_inference_seconds),
                _format_cell(r.change_precision),
                _format_cell(r.change_recall),
            ]
        )
    return rows


def render_report(results: Sequence[EvalResult], format: str = "markdown") -> str:
    """Comparison table with the frozen 7-column schema, 2-decimal values."""
    if not results:
        raise ValueError("render_report needs at least one result")
    rows = _report_rows(results)
    if format == "markdown":
        lines = [
            "| " + " | ".join(rows[0]) + " |",
            "|" + "|".join([" --- "] * len(rows[0])) + "|",
        ]
        for row in rows[1:]:
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerows(rows)
        return buffer.getvalue()
    raise ValueError(f"unknown report format: {format!r}")
