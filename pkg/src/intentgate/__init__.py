"""intentgate: intent detection and dialogue routing for chat lessons.

A student message either continues the current lesson or asks to change
topic. This package trains and serves classifiers for that decision (local
TF-IDF + random forest, or remote chat-completion backends using a sentinel
token or function calling), routes conversations through a six-phase lesson
with confidence-aware confirmation turns, and benchmarks backends on
accuracy and per-message latency.
"""

from .base import ChatMessage, Classifier, Intent, IntentGateError, IntentPrediction
from .corpus import (
    AgreementReport,
    Dataset,
    LabeledMessage,
    SplitResult,
    class_balance,
    compute_agreement,
    generate_synthetic_corpus,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .features import FeatureVector, TfIdfModel, fit_tfidf, tokenize, transform
from .forest import (
    ForestClassifier,
    ForestParams,
    ModelBundle,
    RandomForestModel,
    classify,
    fit_forest,
    gini,
    load_model,
    predict_proba,
    save_model,
    tune,
)
from .backends import (
    BackendConfig,
    FunctionCallBackend,
    ScriptedMockBackend,
    SentinelBackend,
    ToolSchema,
    chat_reply,
    classify_function_call,
    classify_sentinel,
)
from .dialogue import (
    DialogueState,
    Navigation,
    NavigationKind,
    PhaseScript,
    Reply,
    ThresholdPolicy,
    handle_turn,
    load_default_phase_scripts,
    load_phase_scripts,
    parse_confirmation,
)
from .bench import (
    ConfusionMatrix,
    EvalResult,
    UncertaintyReport,
    clustered_bootstrap,
    evaluate,
    metrics_from_confusion,
    render_report,
    roc_auc,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementReport",
    "BackendConfig",
    "ChatMessage",
    "Classifier",
    "ConfusionMatrix",
    "Dataset",
    "DialogueState",
    "EvalResult",
    "FeatureVector",
    "ForestClassifier",
    "ForestParams",
    "FunctionCallBackend",
    "Intent",
    "IntentGateError",
    "IntentPrediction",
    "LabeledMessage",
    "ModelBundle",
    "Navigation",
    "NavigationKind",
    "PhaseScript",
    "RandomForestModel",
    "Reply",
    "ScriptedMockBackend",
    "SentinelBackend",
    "SplitResult",
    "TfIdfModel",
    "ThresholdPolicy",
    "ToolSchema",
    "UncertaintyReport",
    "chat_reply",
    "class_balance",
    "classify",
    "classify_function_call",
    "classify_sentinel",
    "clustered_bootstrap",
    "compute_agreement",
    "evaluate",
    "fit_forest",
    "fit_tfidf",
    "generate_synthetic_corpus",
    "gini",
    "handle_turn",
    "load_dataset",
    "load_default_phase_scripts",
    "load_model",
    "load_phase_scripts",
    "metrics_from_confusion",
    "parse_confirmation",
    "predict_proba",
    "render_report",
    "roc_auc",
    "save_dataset",
    "save_model",
    "split_dataset",
    "tokenize",
    "transform",
    "tune",
]
