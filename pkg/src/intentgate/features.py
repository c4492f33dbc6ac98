"""Tokenization and TF-IDF feature extraction for the classical classifier."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .base import IntentGateError


class EmptyCorpus(IntentGateError):
    pass


# Runs of Unicode alphanumerics; underscores and punctuation split tokens.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, ngram_max: int = 1) -> list[str]:
    """Lowercased alphanumeric tokens, plus space-joined n-grams up to ngram_max.

    Student messages are slangy ("yh", "4 me"), so there is deliberately no
    stemming or stopword removal; words like "stop" carry the signal.
    """
    unigrams = _TOKEN_RE.findall(text.lower())
    tokens = list(unigrams)
    for size in range(2, ngram_max + 1):
        for i in range(len(unigrams) - size + 1):
            tokens.append(" ".join(unigrams[i : i + size]))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    token_to_index: dict[str, int]
    document_frequency: tuple[int, ...]
    n_documents: int

    def __len__(self) -> int:
        return len(self.token_to_index)


@dataclass(frozen=True)
class TfIdfModel:
    """Fitted vocabulary plus smoothed IDF weights.

    idf = ln((1 + N) / (1 + df)) + 1, so even ubiquitous tokens keep a
    positive weight.
    """

    vocabulary: Vocabulary
    idf: tuple[float, ...]
    ngram_range: tuple[int, int] = (1, 2)
    l2_normalize: bool = True

    @property
    def dimension(self) -> int:
        return len(self.vocabulary)


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector: (index, weight) entries with strictly increasing indices."""

    entries: tuple[tuple[int, float], ...]
    dimension: int

    def to_dense(self) -> list[float]:
        dense = [0.0] * self.dimension
        for index, weight in self.entries:
            dense[index] = weight
        return dense

    def as_dict(self) -> dict[int, float]:
        return dict(self.entries)


def fit_tfidf(
    texts: Sequence[str],
    ngram_range: tuple[int, int] = (1, 2),
    l2_normalize: bool = True,
    min_document_frequency: int = 1,
) -> TfIdfModel:
    """Fit vocabulary and IDF weights over a corpus.

    Vocabulary indices are assigned in sorted token order, so fitting is
    order-independent. min_document_frequency prunes rare tokens when asked;
    the default keeps everything because the corpora here are small.
    """
    if not texts:
        raise EmptyCorpus("cannot fit TF-IDF on an empty corpus")
    if ngram_range[0] != 1 or ngram_range[1] < 1:
        raise ValueError(f"ngram_range must be (1, n_max >= 1), got {ngram_range}")
    df: Counter[str] = Counter()
    for text in texts:
        df.update(set(tokenize(text, ngram_range[1])))
    kept = sorted(t for t, count in df.items() if count >= min_document_frequency)
    token_to_index = {token: i for i, token in enumerate(kept)}
    n_documents = len(texts)
    document_frequency = tuple(df[token] for token in kept)
    idf = tuple(
        math.log((1 + n_documents) / (1 + df_i)) + 1.0 for df_i in document_frequency
    )
    vocabulary = Vocabulary(
        token_to_index=token_to_index,
        document_frequency=document_frequency,
        n_documents=n_documents,
    )
    return TfIdfModel(
        vocabulary=vocabulary,
        idf=idf,
        ngram_range=(ngram_range[0], ngram_range[1]),
        l2_normalize=l2_normalize,
    )


def transform(model: TfIdfModel, text: str) -> FeatureVector:
    """Map text to term_count * idf weights; OOV tokens are dropped silently."""
    counts: Counter[int] = Counter()
    for token in tokenize(text, model.ngram_range[1]):
        index = model.vocabulary.token_to_index.get(token)
        if index is not None:
            counts[index] += 1
    entries = [(index, counts[index] * model.idf[index]) for index in sorted(counts)]
    if model.l2_normalize and entries:
        norm = math.sqrt(sum(w * w for _, w in entries))
        if norm > 0:
            entries = [(i, w / norm) for i, w in entries]
    return FeatureVector(entries=tuple(entries), dimension=model.dimension)


def transform_many(model: TfIdfModel, texts: Sequence[str]) -> list[FeatureVector]:
    return [transform(model, text) for text in texts]


def tfidf_to_dict(model: TfIdfModel) -> dict:
    """JSON-ready form used inside the persisted model file."""
    vocab = model.vocabulary
    tokens = sorted(vocab.token_to_index, key=vocab.token_to_index.get)
    return {
        "tokens": tokens,
        "document_frequency": list(vocab.document_frequency),
        "n_documents": vocab.n_documents,
        "idf": list(model.idf),
        "ngram_range": list(model.ngram_range),
        "l2_normalize": model.l2_normalize,
    }


def tfidf_from_dict(payload: dict) -> TfIdfModel:
    tokens = payload["tokens"]
    vocabulary = Vocabulary(
        token_to_index={token: i for i, token in enumerate(tokens)},
        document_frequency=tuple(payload["document_frequency"]),
        n_documents=int(payload["n_documents"]),
    )
    return TfIdfModel(
        vocabulary=vocabulary,
        idf=tuple(payload["idf"]),
        ngram_range=(payload["ngram_range"][0], payload["ngram_range"][1]),
        l2_normalize=bool(payload["l2_normalize"]),
    )
