"""Build a labeled message corpus, check annotator agreement, and split it.

The real annotated chat data is private, so the library ships a seeded
synthetic generator calibrated to the same shape: short slangy student
messages, ~8.6% of which ask to leave the lesson.
"""

from intentgate import (
    class_balance,
    compute_agreement,
    generate_synthetic_corpus,
    save_dataset,
    split_dataset,
)
from intentgate.corpus import agreement_pairs

# 806 messages at the observed positive rate; deterministic per seed
dataset = generate_synthetic_corpus(n=806, positive_rate=0.0856, seed=1)
print(f"messages: {len(dataset)}")
print(f"conversations: {len(dataset.conversation_ids())}")
print(f"change-topic rate: {class_balance(dataset):.4f}")

for message in list(dataset)[:5]:
    print(f"  [{message.label.value:>12}] {message.text!r}")

# a quarter of messages carry a second annotation; measure agreement
pairs = agreement_pairs(dataset)
report = compute_agreement(pairs)
print(f"\ndouble-annotated items: {report.n_items}")
print(f"percent agreement: {report.percent_agreement:.3f}")
print(f"Cohen's kappa:     {report.kappa:.3f}")

# 60/20/20 split; grouped=True keeps whole conversations in one fold so
# evaluation is honest about within-conversation correlation
split = split_dataset(dataset, ratios=(0.6, 0.2, 0.2), seed=7, grouped=True)
print(f"\ntrain/val/test sizes: {len(split.train)}/{len(split.validation)}/{len(split.test)}")

save_dataset(dataset, "/tmp/intentgate_corpus.jsonl")
print("corpus written to /tmp/intentgate_corpus.jsonl")
