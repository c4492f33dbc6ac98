"""Benchmark classifier backends on accuracy and per-message latency.

Remote LLM backends aren't reachable from a demo, so a scripted mock stands
in for one; it replays canned replies (including the "<exit>" sentinel) with
an artificial delay, which is enough to exercise the whole harness: the
metric suite, per-message records, clustered uncertainty, and ROC AUC.
"""

from intentgate import (
    ForestClassifier,
    ForestParams,
    Intent,
    ModelBundle,
    ScriptedMockBackend,
    clustered_bootstrap,
    evaluate,
    fit_forest,
    fit_tfidf,
    generate_synthetic_corpus,
    render_report,
    roc_auc,
    split_dataset,
)
from intentgate.features import transform_many

dataset = generate_synthetic_corpus(n=400, positive_rate=0.12, seed=5)
split = split_dataset(dataset, seed=2, grouped=True)
train = dataset.subset(split.train)
test = dataset.subset(split.test)

tfidf = fit_tfidf([m.text for m in train])
forest = fit_forest(
    transform_many(tfidf, [m.text for m in train]),
    [m.label for m in train],
    ForestParams(n_trees=120, seed=1),
)
forest_clf = ForestClassifier(ModelBundle(tfidf, forest, 0.5))

# a mock "remote model" that answers correctly 90% of the time, slowly
import random

rng = random.Random(0)
script = []
for message in test:
    correct = rng.random() < 0.9
    is_change = (message.label is Intent.CHANGE_TOPIC) == correct
    script.append("<exit>" if is_change else "let us continue the lesson")
mock_llm = ScriptedMockBackend(script, artificial_latency_seconds=0.002, label="mock remote LLM")

runs = [
    evaluate(forest_clf, test, warmup=True),
    evaluate(mock_llm, test, warmup=False),  # scripted: entries map 1:1 to messages
]
print(render_report([run.result for run in runs], format="markdown"))

# conversation-clustered bootstrap: uncertainty that respects the fact that
# messages within one conversation are correlated
for run in runs:
    convs = [r.conversation_id for r in run.records]
    uncertainty = clustered_bootstrap(run.records, convs, n_resamples=1000, seed=4)
    print(
        f"{run.result.model_label}: macro-F1 {run.result.macro_f1:.3f}"
        f" +/- {uncertainty.macro_f1_se:.3f} (clustered SE, {uncertainty.n_clusters} conversations)"
    )

# the forest emits calibrated-ish probabilities, so ROC AUC applies to it
forest_run = runs[0]
scores = [r.confidence for r in forest_run.records]
gold = [r.gold for r in forest_run.records]
print(f"forest ROC AUC: {roc_auc(scores, gold):.3f}")
