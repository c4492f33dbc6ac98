"""Train the local TF-IDF + random-forest classifier, tune it, persist it.

The forest is the low-latency path: classification runs in well under a
millisecond, which matters when every student message pays the cost.
"""

from intentgate import (
    ForestClassifier,
    ForestParams,
    ModelBundle,
    classify,
    fit_forest,
    fit_tfidf,
    generate_synthetic_corpus,
    load_model,
    save_model,
    split_dataset,
    tune,
)
from intentgate.features import transform_many

dataset = generate_synthetic_corpus(n=806, positive_rate=0.0856, seed=1)
split = split_dataset(dataset, seed=7, grouped=True)
train = dataset.subset(split.train)
val = dataset.subset(split.validation)

# unigrams + bigrams: cues like "go straight" and "want to" live in bigrams
tfidf = fit_tfidf([m.text for m in train], ngram_range=(1, 2))
print(f"vocabulary size: {tfidf.dimension}")

X_train = transform_many(tfidf, [m.text for m in train])
y_train = [m.label for m in train]
X_val = transform_many(tfidf, [m.text for m in val])
y_val = [m.label for m in val]

model = fit_forest(X_train, y_train, ForestParams(n_trees=200, seed=3))
print(f"forest: {len(model.trees)} trees over {model.n_features} features")

# seeded random search over the hyperparameter space, scored on validation
result = tune((X_train, y_train), (X_val, y_val), budget=10, seed=11)
print(f"best of {len(result.trials)} trials: val macro-F1 {result.macro_f1:.3f}")
print(f"  {result.params}")

best = fit_forest(X_train, y_train, result.params)
bundle = ModelBundle(tfidf=tfidf, forest=best, threshold=0.5)
save_model(bundle, "/tmp/intentgate_model.json")
reloaded = load_model("/tmp/intentgate_model.json")

for text in ("tell me more", "Pls can we go straight to the teaching", "yh"):
    prediction = classify(reloaded.forest, reloaded.tfidf, text)
    print(
        f"  {text!r} -> {prediction.intent.value}"
        f" (p={prediction.confidence:.2f}, {prediction.latency_seconds * 1000:.2f} ms)"
    )

clf = ForestClassifier(reloaded)
print(f"classifier label for reports: {clf.label}")
